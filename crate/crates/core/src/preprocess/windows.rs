//! Cropping to a multiple of the generator's downsampling factor and
//! sliding-window extraction.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::ingest::EcgRecord;
use crate::leads::LeadSet;

/// Keeps the first `⌊L/m⌋·m` samples.
pub fn crop_to_multiple(rec: &EcgRecord, m: usize) -> Result<EcgRecord> {
    if m == 0 {
        return Err(Error::Precondition("crop multiple must be positive".into()));
    }
    if rec.len() < m {
        return Err(Error::RecordTooShort {
            len: rec.len(),
            required: m,
        });
    }
    let keep = rec.len() / m * m;
    if keep == rec.len() {
        return Ok(rec.clone());
    }
    rec.with_signal(rec.signal().slice(s![.., ..keep]).to_owned(), rec.fs())
}

/// Splits a 12-row matrix into the 3 input rows and 9 target rows.
pub fn split_leads(signal: ArrayView2<'_, f32>) -> (Array2<f32>, Array2<f32>) {
    let input = signal.select(ndarray::Axis(0), &LeadSet::input_rows());
    let target = signal.select(ndarray::Axis(0), &LeadSet::target_rows());
    (input, target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub record_id: String,
    pub start: usize,
    /// 3 × length, rows in `LeadSet::INPUT_3` order.
    pub input: Array2<f32>,
    /// 9 × length, rows in `LeadSet::TARGET_9` order.
    pub target: Array2<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowedDataset {
    pub length: usize,
    pub stride: usize,
    pub windows: Vec<Window>,
}

impl WindowedDataset {
    pub fn new(length: usize, stride: usize) -> Self {
        Self {
            length,
            stride,
            windows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn extend(&mut self, other: WindowedDataset) {
        debug_assert_eq!(self.length, other.length);
        self.windows.extend(other.windows);
    }
}

/// Windows start at 0, stride, 2·stride, … while they fit inside the record.
pub fn make_windows(rec: &EcgRecord, length: usize, stride: usize) -> Result<WindowedDataset> {
    if length == 0 || stride == 0 {
        return Err(Error::Precondition("window length and stride must be positive".into()));
    }
    if rec.len() < length {
        return Err(Error::RecordTooShort {
            len: rec.len(),
            required: length,
        });
    }
    let mut ds = WindowedDataset::new(length, stride);
    let mut start = 0;
    while start + length <= rec.len() {
        let (input, target) = split_leads(rec.signal().slice(s![.., start..start + length]));
        ds.windows.push(Window {
            record_id: rec.record_id.clone(),
            start,
            input,
            target,
        });
        start += stride;
    }
    Ok(ds)
}
