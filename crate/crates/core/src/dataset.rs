//! IDX (MNIST) ingestion, synthetic Gaussian samples and CSV helpers.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::RealVector;
use crate::rng::{tag, CounterRng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_LABELS: &str = "train-labels-idx1-ubyte";

/// Images flattened row-major with pixels scaled into [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub images: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
    pub rows: usize,
    pub cols: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Indices of images carrying `label`, in file order.
    pub fn indices_of(&self, label: u8) -> Vec<usize> {
        match &self.labels {
            Some(ls) => ls
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == label)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| parse_err(offset, "truncated header"))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(parse_err(
            0,
            format!("bad magic {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

/// Parses an IDX3 image file and divides every pixel byte by 255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = rows
        .checked_mul(cols)
        .ok_or_else(|| parse_err(8, "image dimensions overflow"))?;
    let total = pixels
        .checked_mul(count)
        .ok_or_else(|| parse_err(4, "payload size overflows"))?;
    let payload = &bytes[16..];
    if payload.len() < total {
        return Err(parse_err(
            16 + payload.len(),
            format!(
                "truncated payload: expected {total} pixel bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > total {
        return Err(parse_err(16 + total, "trailing bytes after last image"));
    }
    let images = if pixels == 0 {
        vec![Vec::new(); count]
    } else {
        payload
            .chunks_exact(pixels)
            .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
            .collect()
    };
    Ok(ImageSet {
        images,
        labels: None,
        rows,
        cols,
    })
}

/// Parses an IDX1 label file; labels must be digits 0-9.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(parse_err(
            8 + payload.len(),
            format!(
                "truncated payload: expected {count} labels, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > count {
        return Err(parse_err(8 + count, "trailing bytes after last label"));
    }
    if let Some(i) = payload.iter().position(|&l| l > 9) {
        return Err(parse_err(
            8 + i,
            format!("label {} is not a digit", payload[i]),
        ));
    }
    Ok(payload.to_vec())
}

/// Inverse of [`parse_idx_images`]; pixels are rounded back to bytes.
pub fn encode_idx_images(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.len() * set.pixels());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.len() as u32).to_be_bytes());
    out.extend_from_slice(&(set.rows as u32).to_be_bytes());
    out.extend_from_slice(&(set.cols as u32).to_be_bytes());
    for img in &set.images {
        out.extend(
            img.iter()
                .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads the MNIST training split (uncompressed IDX files) from `dir`.
pub fn load_mnist(dir: &Path) -> Result<ImageSet> {
    let mut set = parse_idx_images(&read(&dir.join(MNIST_IMAGES))?)?;
    let labels = parse_idx_labels(&read(&dir.join(MNIST_LABELS))?)?;
    if labels.len() != set.len() {
        return Err(Error::domain(format!(
            "{} images but {} labels in {}",
            set.len(),
            labels.len(),
            dir.display()
        )));
    }
    set.labels = Some(labels);
    Ok(set)
}

/// True when both MNIST files exist under `dir`.
pub fn mnist_available(dir: &Path) -> bool {
    dir.join(MNIST_IMAGES).is_file() && dir.join(MNIST_LABELS).is_file()
}

/// `count` standard-normal vectors; coordinate `j` of sample `i` is a pure
/// function of `(seed, i, j)`.
pub fn gaussian_samples(count: usize, dim: usize, seed: u64) -> Result<Vec<RealVector>> {
    if count == 0 || dim == 0 {
        return Err(Error::domain(
            "gaussian_samples needs count >= 1 and dim >= 1",
        ));
    }
    let stream = CounterRng::from_path(seed, &[tag::SAMPLES]);
    (0..count)
        .into_par_iter()
        .map(|i| RealVector::new(stream.child(i as u64).normals(dim)))
        .collect()
}

/// A blocky 28x28 seven-segment rendering of `digit`, pixels in {0, 1}.
/// Stands in for handwritten digits when no MNIST files are available.
pub fn glyph_digit(digit: u8) -> Vec<f64> {
    const SEGMENTS: [u8; 10] = [
        0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111,
        0b1111111, 0b1101111,
    ];
    let mask = SEGMENTS[usize::from(digit % 10)];
    let mut img = vec![0.0; 28 * 28];
    let mut fill = |r0: usize, r1: usize, c0: usize, c1: usize| {
        for r in r0..r1 {
            for c in c0..c1 {
                img[r * 28 + c] = 1.0;
            }
        }
    };
    // a: top, b: upper right, c: lower right, d: bottom, e: lower left,
    // f: upper left, g: middle.
    let segs: [(usize, usize, usize, usize); 7] = [
        (4, 7, 8, 20),
        (4, 15, 17, 20),
        (13, 24, 17, 20),
        (21, 24, 8, 20),
        (13, 24, 8, 11),
        (4, 15, 8, 11),
        (12, 15, 8, 20),
    ];
    for (bit, &(r0, r1, c0, c1)) in segs.iter().enumerate() {
        if mask & (1 << bit) != 0 {
            fill(r0, r1, c0, c1);
        }
    }
    img
}

/// Reals in CSV files: 17 significant digits, scientific notation.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes a header line followed by `rows`.
pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a headed CSV file into its header and string records.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((header, rows))
}

/// Writes an image as a `rows x cols` grid of reals, header `c0..c{cols-1}`.
pub fn write_image_grid(path: &Path, pixels: &[f64], cols: usize) -> Result<()> {
    let header: Vec<String> = (0..cols).map(|c| format!("c{c}")).collect();
    let rows = pixels
        .chunks(cols)
        .map(|row| row.iter().map(|&x| fmt_real(x)).collect());
    write_csv(path, &header, rows)
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
