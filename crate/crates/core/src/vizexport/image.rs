use std::fs;
use std::io::Write;
use std::path::Path;

use super::VizError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8, length 3·width·height.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let pixels = fill.iter().copied().cycle().take(3 * width as usize * height as usize).collect();
        Self { width, height, pixels }
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.idx(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = self.idx(x, y);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// Sets the pixel when (x, y) lies inside the image.
    pub fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            self.set(x as u32, y as u32, c);
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_ppm())
    }

    /// Writes to `path`, creating parent directories.
    pub fn save(&self, path: &Path) -> Result<(), VizError> {
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(path, self.to_ppm())?;
        Ok(())
    }

    /// Parses the P6 layout written by [`Image::to_ppm`].
    pub fn from_ppm(bytes: &[u8]) -> Result<Self, VizError> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(VizError::BadPpm("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| VizError::BadPpm("header"))?);
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(VizError::BadPpm("expected P6 with maxval 255"));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| VizError::BadPpm("dimensions"));
        let (width, height) = (num(fields[1])?, num(fields[2])?);
        let body = bytes.get(pos + 1..).ok_or(VizError::BadPpm("missing pixel data"))?;
        if body.len() != 3 * width as usize * height as usize {
            return Err(VizError::BadPpm("pixel data length"));
        }
        Ok(Self { width, height, pixels: body.to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut im = Image::new(3, 2, [1, 2, 3]);
        im.set(2, 1, [255, 0, 7]);
        im.put(-1, 0, [9, 9, 9]);
        im.put(3, 0, [9, 9, 9]);
        let bytes = im.to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        let back = Image::from_ppm(&bytes).unwrap();
        assert_eq!(back, im);
        assert_eq!(back.get(2, 1), [255, 0, 7]);
        assert!(Image::from_ppm(&bytes[..20]).is_err());
        assert!(Image::from_ppm(b"P3\n1 1\n255\n000").is_err());
    }

    #[test]
    fn save_creates_directories() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("viz/gaze/5.ppm");
        Image::new(2, 2, [0; 3]).save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), Image::new(2, 2, [0; 3]).to_ppm());
    }
}
