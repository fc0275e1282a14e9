use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lfs_core::config::{DataSource, RunConfig};
use lfs_core::data::image_io::{load_image, save_png};
use lfs_core::data::{generate_synth_shapes, load_unpaired, synth_dataset, Domain, SynthShapesSpec, UnpairedDataset};
use lfs_core::eval::{self, diversity_score, save_grid, style_consistency, PixelL1};
use lfs_core::train::{load_checkpoint, save_checkpoint, OBJECTIVE_TERMS};
use lfs_core::verify::{run_suite, Fault, Precision, VerifyOptions};
use lfs_core::{sample_latent, LatentCode, Tensor, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{parse_code_arg, CodeFile};
use crate::*;

/// Environment variable that relocates relative output paths.
pub const OUTPUT_ROOT_VAR: &str = "LFS_OUTPUT_ROOT";

fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn create_dir(p: &Path) -> CliResult {
    std::fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn parent_dir(p: &Path) -> CliResult {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => create_dir(d),
        _ => Ok(()),
    }
}

/// `--key value` and `--key=value` pairs.
fn parse_overrides(args: &[String]) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(name) = a.strip_prefix("--") else {
            return Err(CliError::Usage(format!("expected `--key value`, got {a:?}")));
        };
        let (key, value) = match name.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{name} needs a value")))?;
                (name.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn run_config(config: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let pairs = parse_overrides(overrides)?;
    cfg.apply_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> CliResult<UnpairedDataset> {
    Ok(match &cfg.data {
        DataSource::Folder(root) => load_unpaired(root, cfg.image_size, cfg.augment)?,
        DataSource::Synthetic { count, seed } => {
            let mut ds = synth_dataset(&SynthShapesSpec::new(*count, cfg.image_size, *seed))?;
            ds.augment = cfg.augment;
            ds
        }
    })
}

const META_IMAGE_SIZE: &str = "image_size";
const META_RUN_CONFIG: &str = "run_config";

fn load_model(path: &Path) -> CliResult<TrainState> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

fn image_size(state: &TrainState, arg: Option<usize>) -> CliResult<usize> {
    if let Some(s) = arg {
        return Ok(s);
    }
    state
        .meta
        .get(META_IMAGE_SIZE)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Usage("checkpoint records no image size; pass --image-size".into()))
}

fn load_inputs(paths: &[PathBuf], size: usize) -> CliResult<Vec<Tensor<f32>>> {
    paths.iter().map(|p| Ok(load_image(p, size)?)).collect()
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

pub fn train(args: TrainArgs) -> CliResult {
    let cfg = run_config(args.config.as_deref(), &args.overrides)?;
    println!("# effective configuration");
    print!("{}", cfg.to_text());
    let out = output_path(&cfg.output_dir);
    create_dir(&out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| io_err(&out, e))?;
    let dataset = load_dataset(&cfg)?;

    let mut state = match &args.resume {
        Some(p) => {
            let s = load_model(p)?;
            if s.config != cfg.train {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained with a different model configuration",
                    p.display()
                )));
            }
            s
        }
        None => TrainState::new(cfg.train.clone())?,
    };
    state.meta.insert(META_IMAGE_SIZE.into(), cfg.image_size.to_string());
    state.meta.insert(META_RUN_CONFIG.into(), cfg.to_text());

    let metrics_path = out.join("metrics.jsonl");
    let file = if args.resume.is_some() {
        OpenOptions::new().append(true).create(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .map_err(|e| io_err(&metrics_path, e))?;
    let mut log = BufWriter::new(file);

    let remaining = cfg.steps.saturating_sub(state.step);
    let every = cfg.checkpoint_every;
    let result = state.fit(&dataset, remaining, |m, s| {
        let mut m = *m;
        if !cfg.record_wall_time {
            m.wall_time = 0.0;
        }
        writeln!(log, "{}", m.to_json_line())
            .and_then(|_| log.flush())
            .map_err(|e| lfs_core::Error::InvalidArgument(format!("metrics log: {e}")))?;
        if every > 0 && m.step % every == 0 {
            save_checkpoint(s, &out.join(format!("ckpt-{:06}.lfs", m.step)))?;
        }
        Ok(())
    });
    match result {
        Ok(metrics) => {
            save_checkpoint(&state, &out.join("final.lfs"))?;
            if let Some(last) = metrics.last() {
                println!(
                    "step {} d_loss {:.6} g_loss {:.6}",
                    last.step, last.d_loss, last.g_loss
                );
            }
            println!("wrote {}", out.join("final.lfs").display());
            Ok(())
        }
        Err(e @ lfs_core::Error::Divergence { .. }) => {
            let dump = out.join("divergence.txt");
            let text = format!("{e}\n\n{}", cfg.to_text());
            std::fs::write(&dump, text).map_err(|err| io_err(&dump, err))?;
            save_checkpoint(&state, &out.join("diverged.lfs"))?;
            eprintln!("divergence dump written to {}", dump.display());
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn sample(args: SampleArgs) -> CliResult {
    let state = load_model(&args.checkpoint)?;
    let model = state.translator();
    let k = model.code_dim();
    let size = image_size(&state, args.image_size)?;
    let inputs = load_inputs(&args.inputs, size)?;
    let codes: Vec<LatentCode<f32>> = match &args.codes {
        Some(p) => CodeFile::read(p)?.into_codes(k)?,
        None => {
            if args.n_codes == 0 {
                return Err(CliError::Usage("--n-codes must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..args.n_codes)
                .map(|_| sample_latent(k, &mut rng))
                .collect::<lfs_core::Result<_>>()?
        }
    };
    let out = output_path(&args.out_dir);
    create_dir(&out)?;
    for (path, x) in args.inputs.iter().zip(&inputs) {
        for (j, y) in model.translate_codes(x, &codes)?.iter().enumerate() {
            save_png(y, &out.join(format!("{}_{j:03}.png", stem(path))))?;
        }
    }
    CodeFile::from_codes(k, &codes).write(&out.join("codes.json"))?;
    println!(
        "wrote {} images and codes.json to {}",
        inputs.len() * codes.len(),
        out.display()
    );
    Ok(())
}

pub fn interpolate(args: InterpolateArgs) -> CliResult {
    let state = load_model(&args.checkpoint)?;
    let model = state.translator();
    let k = model.code_dim();
    let size = image_size(&state, args.image_size)?;
    let inputs = load_inputs(&args.inputs, size)?;
    let (z1, z2) = match &args.codes {
        Some(p) => {
            let mut codes = CodeFile::read(p)?.into_codes(k)?;
            if codes.len() < 2 {
                return Err(CliError::Usage("interpolation needs two codes in the code file".into()));
            }
            let z2 = codes.swap_remove(1);
            (codes.swap_remove(0), z2)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (sample_latent(k, &mut rng)?, sample_latent(k, &mut rng)?)
        }
    };
    let rows = inputs
        .iter()
        .map(|x| Ok(eval::interpolation_grid(model, x, &z1, &z2, args.steps)?))
        .collect::<CliResult<Vec<_>>>()?;
    let out = output_path(&args.out);
    parent_dir(&out)?;
    save_grid(&rows, &out)?;
    println!("wrote {} ({} x {})", out.display(), rows.len(), args.steps);
    Ok(())
}

pub fn transfer(args: TransferArgs) -> CliResult {
    let state = load_model(&args.checkpoint)?;
    let model = state.translator();
    let k = model.code_dim();
    let codes = match &args.codes {
        Some(p) => CodeFile::read(p)?.into_codes(k)?,
        None => args
            .code
            .iter()
            .map(|c| parse_code_arg(c, k))
            .collect::<CliResult<Vec<_>>>()?,
    };
    if codes.is_empty() {
        return Err(CliError::Usage("give --codes FILE or at least one --code".into()));
    }
    let size = image_size(&state, args.image_size)?;
    let inputs = load_inputs(&args.inputs, size)?;
    let mut rows = vec![Vec::with_capacity(inputs.len()); codes.len()];
    for x in &inputs {
        for (r, y) in model.translate_codes(x, &codes)?.into_iter().enumerate() {
            rows[r].push(y);
        }
    }
    let out = output_path(&args.out);
    parent_dir(&out)?;
    save_grid(&rows, &out)?;
    println!("wrote {} ({} codes x {} inputs)", out.display(), codes.len(), inputs.len());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> CliResult {
    let state = load_model(&args.checkpoint)?;
    let model = state.translator();
    let size = image_size(&state, args.image_size)?;
    let dataset = match &args.data {
        Some(root) => load_unpaired(root, size, Default::default())?,
        None => synth_dataset(&SynthShapesSpec::new(args.synthetic_count, size, args.synthetic_seed))?,
    };
    let n = args.n_inputs.min(dataset.len_a());
    if n == 0 {
        return Err(CliError::Usage("--n-inputs must be >= 1".into()));
    }
    let inputs: Vec<Tensor<f32>> = (0..n).map(|i| dataset.get(Domain::A, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let diversity = diversity_score(model, &inputs, args.n_codes_per_image, args.n_pairs, &PixelL1, &mut rng)?;
    let codes = (0..args.n_codes)
        .map(|_| sample_latent(model.code_dim(), &mut rng))
        .collect::<lfs_core::Result<Vec<_>>>()?;
    let consistency = style_consistency(model, &inputs, &codes)?;
    let mut report = String::new();
    report += &format!("checkpoint={}\nstep={}\n", args.checkpoint.display(), state.step);
    report += &prefixed("diversity", &diversity.to_key_values());
    report += &prefixed("consistency", &consistency.to_key_values());
    print!("{report}");
    if let Some(dir) = &args.out_dir {
        let dir = output_path(dir);
        create_dir(&dir)?;
        std::fs::write(dir.join("evaluation.txt"), &report).map_err(|e| io_err(&dir, e))?;
        let mut rows = Vec::with_capacity(codes.len());
        for z in &codes {
            rows.push(inputs.iter().map(|x| Ok(model.translate(x, z)?)).collect::<CliResult<Vec<_>>>()?);
        }
        save_grid(&rows, &dir.join("style_grid.png"))?;
    }
    Ok(())
}

fn prefixed(prefix: &str, kv: &str) -> String {
    kv.lines().map(|l| format!("{prefix}.{l}\n")).collect()
}

pub fn describe(args: DescribeArgs) -> CliResult {
    let (text, state) = match &args.checkpoint {
        Some(p) => {
            let s = load_model(p)?;
            let text = s.meta.get(META_RUN_CONFIG).cloned().unwrap_or_default();
            (text, s)
        }
        None => {
            let cfg = run_config(args.config.as_deref(), &args.overrides)?;
            (cfg.to_text(), TrainState::new(cfg.train.clone())?)
        }
    };
    if !text.is_empty() {
        println!("# effective configuration");
        print!("{text}");
        println!();
    }
    println!("# generator");
    for row in state.generator.layer_table() {
        println!("{row}");
    }
    let count = |ps: Vec<&Tensor<f32>>| ps.iter().map(|t| t.len()).sum::<usize>();
    println!("modulated channels S = {}", state.generator.modulated_channel_count());
    println!("generator parameters = {}", count(state.generator.parameters()));
    println!();
    println!("# discriminator");
    for row in state.discriminator.layer_table() {
        println!("{row}");
    }
    println!("discriminator parameters = {}", count(state.discriminator.parameters()));
    println!();
    println!("# mapper");
    println!(
        "k = {}, hidden = {:?}, outputs = {}, parameters = {}",
        state.mapper.config().k,
        state.mapper.config().hidden_sizes,
        state.mapper.output_size(),
        state.mapper.parameter_count()
    );
    println!("objective terms = {}", OBJECTIVE_TERMS.join(", "));
    println!("step = {}", state.step);
    Ok(())
}

pub fn synth_data(args: SynthDataArgs) -> CliResult {
    let mut spec = SynthShapesSpec::new(args.count, args.size, args.seed);
    spec.anti_alias = args.anti_alias;
    let out = output_path(&args.out);
    let ds = generate_synth_shapes(&spec, &out)?;
    println!(
        "wrote {} + {} images of {}x{} to {}",
        ds.len_a(),
        ds.len_b(),
        args.size,
        args.size,
        out.display()
    );
    Ok(())
}

pub fn verify(args: VerifyArgs) -> CliResult {
    let precision = match args.precision {
        PrecisionArg::Single => Precision::Single,
        PrecisionArg::Double => Precision::Double,
        PrecisionArg::Both => Precision::Both,
    };
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let report = run_suite(&VerifyOptions {
        precision,
        trials: args.trials,
        seed: args.seed,
        fault: if args.inject_fault { Fault::MisscaleChannel } else { Fault::None },
    })?;
    match args.format {
        ReportFormat::Text => print!("{}", report.to_text()),
        ReportFormat::Kv => print!("{}", report.to_key_values()),
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::Check(format!("failed checks: {}", failed.join(", "))))
    }
}
