use std::io::Write;

use crate::error::{Error, Result};
use crate::scene::geometry::{self, Point};

/// Square binary floor image. Row `r` covers `y ∈ [r, r+1)·extent/res`, so
/// row 0 is `y = 0`; column `c` likewise covers `x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FloorMask {
    resolution: usize,
    pixels: Vec<bool>,
}

impl FloorMask {
    pub fn from_pixels(resolution: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != resolution * resolution {
            return Err(Error::shape("mask pixel count does not match resolution"));
        }
        Ok(Self { resolution, pixels })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.resolution + col]
    }

    /// Mask value at a metric point; points outside the square are false.
    pub fn contains_point(&self, extent: f64, p: Point) -> bool {
        let scale = self.resolution as f64 / extent;
        let (c, r) = ((p[0] * scale).floor(), (p[1] * scale).floor());
        if c < 0.0 || r < 0.0 || c >= self.resolution as f64 || r >= self.resolution as f64 {
            return false;
        }
        self.get(r as usize, c as usize)
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// The mask rotated counter-clockwise by `quarters`·90° in the metric frame.
    pub fn rotate_quarter(&self, quarters: u32) -> FloorMask {
        let n = self.resolution;
        let mut out = vec![false; n * n];
        for r in 0..n {
            for c in 0..n {
                let (mut x, mut y) = (c, r);
                for _ in 0..quarters % 4 {
                    (x, y) = (n - 1 - y, x);
                }
                out[y * n + x] = self.get(r, c);
            }
        }
        FloorMask { resolution: n, pixels: out }
    }

    /// Values in `[0, 1]` for the floor encoder.
    pub fn as_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect()
    }

    /// Binary PGM (P5), one byte per pixel, 0 or 255.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.resolution, self.resolution)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|&p| if p { 255 } else { 0 }).collect();
        w.write_all(&bytes)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_pgm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

/// Pixel is set iff its center lies inside `polygon` (even-odd rule).
pub fn rasterize_floor(polygon: &[Point], extent: f64, resolution: usize) -> Result<FloorMask> {
    if polygon.len() < 3 || geometry::area(polygon) <= 1e-12 {
        return Err(Error::DegeneratePolygon("polygon has zero area".into()));
    }
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let px = extent / resolution as f64;
    let mut pixels = vec![false; resolution * resolution];
    for r in 0..resolution {
        let y = (r as f64 + 0.5) * px;
        // scanline crossings
        let mut xs: Vec<f64> = Vec::new();
        let n = polygon.len();
        for i in 0..n {
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            if (a[1] > y) != (b[1] > y) {
                xs.push(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for c in 0..resolution {
            let x = (c as f64 + 0.5) * px;
            let crossings = xs.iter().filter(|&&cx| x < cx).count();
            pixels[r * resolution + c] = crossings % 2 == 1;
        }
    }
    Ok(FloorMask { resolution, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_square_is_all_true() {
        let m = rasterize_floor(&[[0.0, 0.0], [6.0, 0.0], [6.0, 6.0], [0.0, 6.0]], 6.0, 64).unwrap();
        assert_eq!(m.count(), 64 * 64);
    }

    #[test]
    fn left_half() {
        let m = rasterize_floor(&[[0.0, 0.0], [3.0, 0.0], [3.0, 6.0], [0.0, 6.0]], 6.0, 64).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                assert_eq!(m.get(r, c), c < 32, "row {r} col {c}");
            }
        }
    }

    fn l_shape() -> Vec<Point> {
        vec![[0.5, 0.5], [5.0, 0.5], [5.0, 2.5], [2.5, 2.5], [2.5, 5.2], [0.5, 5.2]]
    }

    #[test]
    fn l_shape_area_within_one_percent() {
        let poly = l_shape();
        let m = rasterize_floor(&poly, 6.0, 512).unwrap();
        let ratio = m.count() as f64 / (512.0 * 512.0);
        let expected = geometry::area(&poly) / 36.0;
        assert!((ratio - expected).abs() / expected < 0.01);
    }

    #[test]
    fn area_converges_with_resolution() {
        let poly = l_shape();
        let expected = geometry::area(&poly) / 36.0;
        let errs: Vec<f64> = [128usize, 256, 512]
            .iter()
            .map(|&r| {
                let m = rasterize_floor(&poly, 6.0, r).unwrap();
                (m.count() as f64 / (r * r) as f64 - expected).abs()
            })
            .collect();
        assert!(errs[2] <= errs[0]);
        assert!(errs[2] < 2e-3);
    }

    #[test]
    fn degenerate_polygon_rejected() {
        assert!(matches!(
            rasterize_floor(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 6.0, 32),
            Err(Error::DegeneratePolygon(_))
        ));
    }

    #[test]
    fn pgm_layout() {
        let m = rasterize_floor(&[[0.0, 0.0], [3.0, 0.0], [3.0, 6.0], [0.0, 6.0]], 6.0, 4).unwrap();
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(&pgm[pgm.len() - 4..], &[255, 255, 0, 0]);
    }

    #[test]
    fn rotate_quarter_four_times_is_identity() {
        let m = rasterize_floor(&l_shape(), 6.0, 32).unwrap();
        assert_eq!(m.rotate_quarter(4), m);
        assert_ne!(m.rotate_quarter(1), m);
    }
}
