//! Packed 8-bit RGB frames.

use std::io::Write;

use crate::geometry::FrameBounds;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn filled(bounds: FrameBounds, rgb: [u8; 3]) -> Self {
        let (width, height) = (bounds.width as usize, bounds.height as usize);
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Raster { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bounds(&self) -> FrameBounds {
        FrameBounds { width: self.width as u32, height: self.height as u32 }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Separable box filter of the given radius with edge replication.
    pub fn box_blur(&mut self, radius: usize) {
        if radius == 0 {
            return;
        }
        let (w, h) = (self.width, self.height);
        let norm = 1.0 / (2 * radius + 1) as f32;
        let mut tmp = vec![0f32; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0f32;
                    for d in -(radius as isize)..=(radius as isize) {
                        let xx = (x as isize + d).clamp(0, w as isize - 1) as usize;
                        acc += self.data[(y * w + xx) * 3 + c] as f32;
                    }
                    tmp[(y * w + x) * 3 + c] = acc * norm;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0f32;
                    for d in -(radius as isize)..=(radius as isize) {
                        let yy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                        acc += tmp[(yy * w + x) * 3 + c];
                    }
                    self.data[(y * w + x) * 3 + c] = (acc * norm).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }

    pub fn scale_intensity(&mut self, factor: f64) {
        for v in &mut self.data {
            *v = (*v as f64 * factor).round().clamp(0.0, 255.0) as u8;
        }
    }

    /// Binary PPM (P6).
    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_flat_images() {
        let mut r = Raster::filled(FrameBounds::new(9, 7).unwrap(), [10, 20, 30]);
        let before = r.clone();
        r.box_blur(2);
        assert_eq!(r, before);
    }

    #[test]
    fn ppm_header() {
        let r = Raster::filled(FrameBounds::new(2, 1).unwrap(), [1, 2, 3]);
        let mut buf = Vec::new();
        r.write_ppm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        assert_eq!(&buf[11..], &[1, 2, 3, 1, 2, 3]);
    }
}
