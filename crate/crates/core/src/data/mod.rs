//! Unpaired two-domain image data.
//!
//! A dataset root holds `trainA/` and `trainB/` image folders. The two
//! domains are sampled from independent random streams and never paired.

pub mod image_io;
pub mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

pub use synth::{generate_synth_shapes, synth_dataset, SynthShapesSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub flip: bool,
    /// Load at `size * 286 / 256` and take a random `size x size` crop.
    pub crop: bool,
}

impl Augment {
    fn load_size(&self, size: usize) -> usize {
        if self.crop {
            size * 286 / 256
        } else {
            size
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnpairedDataset {
    pub domain_a: Vec<PathBuf>,
    pub domain_b: Vec<PathBuf>,
    pub image_size: usize,
    pub augment: Augment,
    images_a: Vec<Tensor<f32>>,
    images_b: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!(
            "missing image directory {}",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && image_io::is_image_file(p))
        .collect();
    files.sort();
    ensure!(!files.is_empty(), "image directory {} is empty", dir.display());
    Ok(files)
}

/// Decode `root/trainA` and `root/trainB`, resized to `image_size` and mapped to `[-1, 1]`.
pub fn load_unpaired(root: &Path, image_size: usize, augment: Augment) -> Result<UnpairedDataset> {
    load_split(root, "train", image_size, augment)
}

/// Like [`load_unpaired`] for an arbitrary split prefix (`train`, `test`, ...).
pub fn load_split(
    root: &Path,
    split: &str,
    image_size: usize,
    augment: Augment,
) -> Result<UnpairedDataset> {
    ensure!(image_size >= 1, "image size must be >= 1");
    let domain_a = list_images(&root.join(format!("{split}A")))?;
    let domain_b = list_images(&root.join(format!("{split}B")))?;
    let load = augment.load_size(image_size);
    let decode = |paths: &[PathBuf]| -> Result<Vec<Tensor<f32>>> {
        paths.iter().map(|p| image_io::load_image(p, load)).collect()
    };
    Ok(UnpairedDataset {
        images_a: decode(&domain_a)?,
        images_b: decode(&domain_b)?,
        domain_a,
        domain_b,
        image_size,
        augment,
    })
}

impl UnpairedDataset {
    /// Build from decoded `[3, s, s]` tensors.
    pub fn from_tensors(a: Vec<Tensor<f32>>, b: Vec<Tensor<f32>>, image_size: usize) -> Result<Self> {
        ensure!(!a.is_empty() && !b.is_empty(), "both domains need at least one image");
        for t in a.iter().chain(&b) {
            ensure!(
                t.shape() == [3, image_size, image_size],
                "image tensor {:?} is not 3x{image_size}x{image_size}",
                t.shape()
            );
        }
        Ok(UnpairedDataset {
            domain_a: Vec::new(),
            domain_b: Vec::new(),
            image_size,
            augment: Augment::default(),
            images_a: a,
            images_b: b,
        })
    }

    pub fn len_a(&self) -> usize {
        self.images_a.len()
    }

    pub fn len_b(&self) -> usize {
        self.images_b.len()
    }

    pub fn lens(&self) -> (usize, usize) {
        (self.len_a(), self.len_b())
    }

    pub fn images(&self, domain: Domain) -> &[Tensor<f32>] {
        match domain {
            Domain::A => &self.images_a,
            Domain::B => &self.images_b,
        }
    }

    /// Un-augmented image `i` of a domain as a `[1, 3, s, s]` batch.
    pub fn get(&self, domain: Domain, i: usize) -> Tensor<f32> {
        let img = &self.images(domain)[i];
        let t = if self.augment.crop {
            center_crop(img, self.image_size)
        } else {
            img.clone()
        };
        let s = self.image_size;
        t.reshape(&[1, 3, s, s]).expect("decoded image shape")
    }

    fn augmented(&self, domain: Domain, i: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let img = &self.images(domain)[i];
        let s = self.image_size;
        let mut t = if self.augment.crop {
            let load = img.shape()[1];
            let oy = rng.random_range(0..=load - s);
            let ox = rng.random_range(0..=load - s);
            crop(img, oy, ox, s)
        } else {
            img.clone()
        };
        if self.augment.flip && rng.random_bool(0.5) {
            flip_horizontal(&mut t);
        }
        t
    }
}

fn crop(img: &Tensor<f32>, oy: usize, ox: usize, s: usize) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = Tensor::zeros(&[3, s, s]);
    for c in 0..3 {
        for y in 0..s {
            let src = &img.data()[(c * h + oy + y) * w + ox..][..s];
            out.data_mut()[(c * s + y) * s..][..s].copy_from_slice(src);
        }
    }
    out
}

fn center_crop(img: &Tensor<f32>, s: usize) -> Tensor<f32> {
    let load = img.shape()[1];
    crop(img, (load - s) / 2, (load - s) / 2, s)
}

fn flip_horizontal(t: &mut Tensor<f32>) {
    let w = t.shape()[2];
    for row in t.data_mut().chunks_mut(w) {
        row.reverse();
    }
}

/// Position state for independent per-domain shuffled streams.
///
/// Sample `t` of a domain with `n` images is `perm(epoch = t / n)[t % n]`,
/// where each epoch's permutation is drawn from the domain's own seed.
/// Batches larger than a domain, or batches that straddle an epoch
/// boundary, simply continue into the next reshuffled epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSampler {
    pub batch_size: usize,
    pub seed_a: u64,
    pub seed_b: u64,
    pub cursor_a: u64,
    pub cursor_b: u64,
    #[serde(skip)]
    perm_cache: [Option<(u64, Vec<usize>)>; 2],
}

impl PartialEq for BatchSampler {
    fn eq(&self, other: &Self) -> bool {
        (self.batch_size, self.seed_a, self.seed_b, self.cursor_a, self.cursor_b)
            == (other.batch_size, other.seed_a, other.seed_b, other.cursor_a, other.cursor_b)
    }
}

impl BatchSampler {
    pub fn new(batch_size: usize, seed_a: u64, seed_b: u64) -> Result<Self> {
        ensure!(batch_size >= 1, "batch size must be >= 1");
        Ok(BatchSampler {
            batch_size,
            seed_a,
            seed_b,
            cursor_a: 0,
            cursor_b: 0,
            perm_cache: [None, None],
        })
    }

    /// Derive both domain seeds from one run seed.
    pub fn from_seed(batch_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xDA7A);
        Self::new(batch_size, rng.random(), rng.random())
    }

    fn index(&mut self, domain: Domain, t: u64, n: usize) -> (usize, ChaCha8Rng) {
        let (slot, seed) = match domain {
            Domain::A => (0, self.seed_a),
            Domain::B => (1, self.seed_b),
        };
        let epoch = t / n as u64;
        let cached = matches!(&self.perm_cache[slot], Some((e, p)) if *e == epoch && p.len() == n);
        if !cached {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            self.perm_cache[slot] = Some((epoch, perm));
        }
        let perm = &self.perm_cache[slot].as_ref().unwrap().1;
        let mut aug = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_A116);
        aug.set_stream(t);
        (perm[(t % n as u64) as usize], aug)
    }

    fn draw(&mut self, ds: &UnpairedDataset, domain: Domain) -> Result<Tensor<f32>> {
        let n = ds.images(domain).len();
        let mut items = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let t = match domain {
                Domain::A => {
                    self.cursor_a += 1;
                    self.cursor_a - 1
                }
                Domain::B => {
                    self.cursor_b += 1;
                    self.cursor_b - 1
                }
            };
            let (i, mut rng) = self.index(domain, t, n);
            items.push(ds.augmented(domain, i, &mut rng));
        }
        let refs: Vec<&Tensor<f32>> = items.iter().collect();
        let s = ds.image_size;
        Tensor::stack(&refs)?.reshape(&[self.batch_size, 3, s, s])
    }

    /// Next `(batch_x, batch_y)`, each `batch_size x 3 x s x s`.
    pub fn next_batch(&mut self, ds: &UnpairedDataset) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let x = self.draw(ds, Domain::A)?;
        let y = self.draw(ds, Domain::B)?;
        Ok((x, y))
    }
}

/// One epoch of batches; the epoch length is set by the larger domain.
pub struct EpochIter<'a> {
    dataset: &'a UnpairedDataset,
    sampler: BatchSampler,
    remaining: usize,
}

impl Iterator for EpochIter<'_> {
    type Item = Result<(Tensor<f32>, Tensor<f32>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.sampler.next_batch(self.dataset))
    }
}

pub fn batch_iter(dataset: &UnpairedDataset, batch_size: usize, seed: u64) -> Result<EpochIter<'_>> {
    let sampler = BatchSampler::from_seed(batch_size, seed)?;
    let larger = dataset.len_a().max(dataset.len_b());
    Ok(EpochIter {
        dataset,
        sampler,
        remaining: larger.div_ceil(batch_size),
    })
}
