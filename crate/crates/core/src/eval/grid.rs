use std::path::Path;

use image::RgbImage;

use crate::data::image_io::tensor_to_rgb;
use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

/// Tile equally sized images row by row with no gutter. Rows are codes and
/// columns are inputs wherever the grid comes from a code × input sweep.
pub fn render_grid(rows: &[Vec<Tensor<f32>>]) -> Result<RgbImage> {
    ensure!(!rows.is_empty() && !rows[0].is_empty(), "grid has no cells");
    let cols = rows[0].len();
    ensure!(
        rows.iter().all(|r| r.len() == cols),
        "grid rows have different lengths"
    );
    let first = tensor_to_rgb(&rows[0][0])?;
    let (w, h) = first.dimensions();
    let mut out = RgbImage::new(w * cols as u32, h * rows.len() as u32);
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let img = tensor_to_rgb(cell)?;
            ensure!(img.dimensions() == (w, h), "grid cells differ in size");
            image::imageops::replace(&mut out, &img, (c as u32 * w) as i64, (r as u32 * h) as i64);
        }
    }
    Ok(out)
}

pub fn save_grid(rows: &[Vec<Tensor<f32>>], path: &Path) -> Result<()> {
    let img = render_grid(rows)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_places_cells_by_row_and_column() {
        let black = Tensor::<f32>::full(&[3, 2, 2], -1.0);
        let white = Tensor::<f32>::full(&[3, 2, 2], 1.0);
        let img = render_grid(&[vec![black.clone(), white.clone()], vec![white, black]]).unwrap();
        assert_eq!(img.dimensions(), (4, 4));
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(3, 0).0, [255, 255, 255]);
        assert_eq!(img.get_pixel(0, 3).0, [255, 255, 255]);
    }

    #[test]
    fn ragged_grid_is_rejected() {
        let t = Tensor::<f32>::zeros(&[3, 2, 2]);
        assert!(render_grid(&[vec![t.clone(), t.clone()], vec![t]]).is_err());
    }
}
