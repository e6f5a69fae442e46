//! Pixmap drawing of line fields.

use ruelle_core::Cplx;

/// RGB image, row 0 at the top.
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn white(width: usize, height: usize) -> Self {
        Canvas { width, height, pixels: vec![255; width * height * 3] }
    }

    pub fn set_black(&mut self, x: usize, y: usize) {
        if x < self.width && y < self.height {
            let k = 3 * (y * self.width + x);
            self.pixels[k..k + 3].fill(0);
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Draws one segment per cell at angle `arg(μ)/2`; cells with `μ = 0` stay blank.
///
/// `values[iy * nx + ix]` is the field at cell `(ix, iy)`, with `iy = 0` the bottom row.
pub fn draw_line_field(values: &[Cplx], nx: usize, ny: usize, cell_px: usize) -> Canvas {
    let mut canvas = Canvas::white(nx * cell_px, ny * cell_px);
    let half = 0.4 * cell_px as f64;
    let steps = (8 * cell_px).max(2);
    for iy in 0..ny {
        for ix in 0..nx {
            let mu = values[iy * nx + ix];
            if mu.norm() == 0.0 {
                continue;
            }
            let theta = 0.5 * mu.arg();
            let row = ny - 1 - iy;
            let cx = (ix * cell_px) as f64 + 0.5 * cell_px as f64;
            let cy = (row * cell_px) as f64 + 0.5 * cell_px as f64;
            for s in 0..=steps {
                let t = -half + 2.0 * half * s as f64 / steps as f64;
                let x = cx + t * theta.cos();
                let y = cy - t * theta.sin();
                canvas.set_black(x.floor() as usize, y.floor() as usize);
            }
        }
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizontal_segment_geometry() {
        let mut values = vec![Cplx::new(0.0, 0.0); 4];
        values[0] = Cplx::new(1.0, 0.0);
        let c = draw_line_field(&values, 2, 2, 8);
        // Cell (0, 0) is the bottom-left block; its center row in the image is 12.
        for y in 0..16 {
            for x in 0..16 {
                let k = 3 * (y * 16 + x);
                let black = c.pixels[k] == 0;
                assert_eq!(black, y == 12 && x < 8, "({x}, {y})");
            }
        }
    }

    #[test]
    fn vertical_for_minus_one() {
        let values = vec![Cplx::new(-1.0, 0.0)];
        let c = draw_line_field(&values, 1, 1, 8);
        for y in 0..8 {
            for x in 0..8 {
                let k = 3 * (y * 8 + x);
                assert_eq!(c.pixels[k] == 0, x == 4, "({x}, {y})");
            }
        }
    }
}
