//! Per-frame green-channel face features.
//!
//! A frame becomes a feature vector in four steps: crop the landmark box
//! (extended upward to keep the forehead), keep the green channel, area-average
//! down to 20x20 and divide by 255.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{Activity, Frame, FrameSequence, LandmarkSet, Point};

pub const GRID: usize = 20;
pub const FEATURES: usize = GRID * GRID;
pub const DEFAULT_FOREHEAD_EXTEND: f64 = 0.4;
const INTENSITY_MAX: f64 = 255.0;

const MATRIX_MAGIC: &[u8; 4] = b"PCFM";
const MATRIX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least 3 landmark points, got {0}")]
    TooFewPoints(usize),
    #[error("landmark ({x}, {y}) outside {width}x{height} frame")]
    PointOutOfBounds { x: i32, y: i32, width: u32, height: u32 },
    #[error("degenerate crop box {width}x{height}")]
    DegenerateBox { width: u32, height: u32 },
    #[error("plane is {width}x{height}, downsampling needs at least {GRID}x{GRID}")]
    PlaneTooSmall { width: u32, height: u32 },
    #[error("intensity {value} at index {index} outside [0, 255]")]
    IntensityOutOfRange { index: usize, value: f64 },
    #[error("expected {FEATURES} values, got {0}")]
    WrongLength(usize),
    #[error("{0} landmark entries for {1} frames")]
    LandmarkCount(usize, usize),
    #[error("frame {index}: {source}")]
    AtFrame {
        index: usize,
        #[source]
        source: Box<FeatureError>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

/// Green-channel intensities of a frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenPlane {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl GreenPlane {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Option<Self> {
        (values.len() == width as usize * height as usize).then_some(GreenPlane {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// 400 normalized intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// One feature row per frame of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Array2<f64>,
    subject_id: String,
    activity: Activity,
}

impl FeatureMatrix {
    pub fn new(rows: Array2<f64>, subject_id: impl Into<String>, activity: Activity) -> Result<Self> {
        if rows.ncols() != FEATURES {
            return Err(FeatureError::WrongLength(rows.ncols()));
        }
        Ok(FeatureMatrix {
            rows,
            subject_id: subject_id.into(),
            activity,
        })
    }

    pub fn from_vectors(
        vectors: Vec<FeatureVector>,
        subject_id: impl Into<String>,
        activity: Activity,
    ) -> Self {
        let n = vectors.len();
        let flat: Vec<f64> = vectors.into_iter().flat_map(FeatureVector::into_inner).collect();
        let rows = Array2::from_shape_vec((n, FEATURES), flat).expect("vectors have 400 values");
        FeatureMatrix {
            rows,
            subject_id: subject_id.into(),
            activity,
        }
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn activity(&self) -> Activity {
        self.activity
    }

    /// Mean feature value of every row, as a time series.
    pub fn row_means(&self) -> Vec<f64> {
        self.rows
            .rows()
            .into_iter()
            .map(|r| r.sum() / r.len() as f64)
            .collect()
    }
}

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CropBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

/// Landmark bounding box extended upward by `forehead_extend` of its height,
/// clamped to the frame.
pub fn face_box(
    width: u32,
    height: u32,
    points: &[Point],
    forehead_extend: f64,
) -> Result<CropBox> {
    if points.len() < 3 {
        return Err(FeatureError::TooFewPoints(points.len()));
    }
    for p in points {
        if p.x < 0 || p.y < 0 || p.x as i64 > width as i64 || p.y as i64 > height as i64 {
            return Err(FeatureError::PointOutOfBounds {
                x: p.x,
                y: p.y,
                width,
                height,
            });
        }
    }
    let min_x = points.iter().map(|p| p.x).min().unwrap() as i64;
    let max_x = points.iter().map(|p| p.x).max().unwrap() as i64;
    let min_y = points.iter().map(|p| p.y).min().unwrap() as i64;
    let max_y = points.iter().map(|p| p.y).max().unwrap() as i64;
    let extension = (forehead_extend * (max_y - min_y) as f64).round() as i64;
    let top = (min_y - extension).max(0);
    let b = CropBox {
        x0: min_x as u32,
        y0: top as u32,
        x1: (max_x as u32).min(width),
        y1: (max_y as u32).min(height),
    };
    if b.x1 <= b.x0 || b.y1 <= b.y0 {
        return Err(FeatureError::DegenerateBox {
            width: b.x1.saturating_sub(b.x0),
            height: b.y1.saturating_sub(b.y0),
        });
    }
    Ok(b)
}

pub fn crop_face(frame: &Frame, points: &[Point], forehead_extend: f64) -> Result<Frame> {
    let b = face_box(frame.width(), frame.height(), points, forehead_extend)?;
    let mut pixels = Vec::with_capacity(b.width() as usize * b.height() as usize);
    let stride = frame.width() as usize;
    for y in b.y0..b.y1 {
        let start = y as usize * stride;
        pixels.extend_from_slice(&frame.pixels()[start + b.x0 as usize..start + b.x1 as usize]);
    }
    Ok(Frame::new(b.width(), b.height(), pixels).expect("non-degenerate box"))
}

pub fn extract_green(frame: &Frame) -> GreenPlane {
    GreenPlane {
        width: frame.width(),
        height: frame.height(),
        values: frame.pixels().iter().map(|p| p[1] as f64).collect(),
    }
}

/// `weights[c]` lists `(source_index, overlap)` for output cell `c` when
/// `src` unit pixels are split into `cells` equal intervals.
fn overlap_weights(src: usize, cells: usize) -> Vec<Vec<(usize, f64)>> {
    let step = src as f64 / cells as f64;
    (0..cells)
        .map(|c| {
            let lo = c as f64 * step;
            let hi = if c + 1 == cells { src as f64 } else { (c + 1) as f64 * step };
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// Area-average a plane onto an `out_w x out_h` grid. Each output cell is the
/// overlap-weighted mean of the source pixels under it, so fractional cell
/// boundaries are handled exactly.
pub fn downsample_to(plane: &GreenPlane, out_w: usize, out_h: usize) -> Result<Vec<f64>> {
    let (w, h) = (plane.width as usize, plane.height as usize);
    if w < out_w || h < out_h {
        return Err(FeatureError::PlaneTooSmall {
            width: plane.width,
            height: plane.height,
        });
    }
    let wx = overlap_weights(w, out_w);
    let wy = overlap_weights(h, out_h);

    // Horizontal pass: one row of `out_w` partial sums per source row.
    let mut partial = vec![0.0; h * out_w];
    for y in 0..h {
        let row = &plane.values[y * w..(y + 1) * w];
        for (cx, weights) in wx.iter().enumerate() {
            partial[y * out_w + cx] = weights.iter().map(|&(i, a)| a * row[i]).sum();
        }
    }
    let cell_area = (w as f64 / out_w as f64) * (h as f64 / out_h as f64);
    let mut out = vec![0.0; out_w * out_h];
    for (cy, weights) in wy.iter().enumerate() {
        for cx in 0..out_w {
            let s: f64 = weights.iter().map(|&(j, a)| a * partial[j * out_w + cx]).sum();
            out[cy * out_w + cx] = s / cell_area;
        }
    }
    Ok(out)
}

/// Area-average onto the 20x20 feature grid.
pub fn downsample(plane: &GreenPlane) -> Result<Vec<f64>> {
    downsample_to(plane, GRID, GRID)
}

pub fn normalize(values: &[f64]) -> Result<FeatureVector> {
    if values.len() != FEATURES {
        return Err(FeatureError::WrongLength(values.len()));
    }
    if let Some((index, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=INTENSITY_MAX).contains(*v))
    {
        return Err(FeatureError::IntensityOutOfRange { index, value });
    }
    Ok(FeatureVector(
        values.iter().map(|v| (v / INTENSITY_MAX).clamp(0.0, 1.0)).collect(),
    ))
}

pub fn frame_features(frame: &Frame, points: &[Point], forehead_extend: f64) -> Result<FeatureVector> {
    let face = crop_face(frame, points, forehead_extend)?;
    normalize(&downsample(&extract_green(&face))?)
}

/// Features for every frame; frames are processed in parallel and written to
/// their own row, so the result does not depend on thread scheduling.
pub fn sequence_to_features(
    seq: &FrameSequence,
    landmarks: &LandmarkSet,
    forehead_extend: f64,
) -> Result<FeatureMatrix> {
    if landmarks.len() != seq.len() && landmarks.len() != 1 {
        return Err(FeatureError::LandmarkCount(landmarks.len(), seq.len()));
    }
    let vectors = seq
        .frames()
        .par_iter()
        .enumerate()
        .map(|(index, frame)| {
            frame_features(frame, landmarks.for_frame(index), forehead_extend).map_err(|e| {
                FeatureError::AtFrame {
                    index,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix::from_vectors(
        vectors,
        seq.subject_id(),
        seq.activity(),
    ))
}

/// CSV with header `subject_id,activity,frame_index,f0..f399`.
pub fn write_matrix_csv(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let io = |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    let mut header = String::from("subject_id,activity,frame_index");
    for i in 0..FEATURES {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(out, "{header}").map_err(io)?;
    for (i, row) in m.rows.rows().into_iter().enumerate() {
        write!(out, "{},{},{}", m.subject_id, m.activity, i).map_err(io)?;
        for v in row {
            write!(out, ",{v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Binary layout: `PCFM`, version, rows, cols (u32 LE), then row-major f64 LE.
pub fn encode_matrix(rows: &Array2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + rows.len() * 8);
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(rows.ncols() as u32).to_le_bytes());
    for v in rows.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    if bytes.len() < 16 || &bytes[..4] != MATRIX_MAGIC {
        return Err("missing PCFM header".to_string());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != MATRIX_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(format!(
            "{} payload bytes for a {rows}x{cols} matrix",
            body.len()
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| e.to_string())
}

pub fn write_matrix_binary(path: &Path, m: &FeatureMatrix) -> Result<()> {
    fs::write(path, encode_matrix(&m.rows)).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_matrix_binary(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_matrix(&bytes).map_err(|reason| FeatureError::Format {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(a: (i32, i32), b: (i32, i32)) -> Vec<Point> {
        vec![
            Point::new(a.0, a.1),
            Point::new(b.0, b.1),
            Point::new((a.0 + b.0) / 2, (a.1 + b.1) / 2),
        ]
    }

    fn plane(w: u32, h: u32, f: impl Fn(u32, u32) -> f64) -> GreenPlane {
        let values = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GreenPlane::new(w, h, values).unwrap()
    }

    #[test]
    fn crop_extends_upward_for_forehead() {
        let frame = Frame::filled(100, 100, [1, 2, 3]).unwrap();
        let b = face_box(100, 100, &pts((20, 40), (80, 90)), 0.4).unwrap();
        assert_eq!(b, CropBox { x0: 20, y0: 20, x1: 80, y1: 90 });
        let c = crop_face(&frame, &pts((20, 40), (80, 90)), 0.4).unwrap();
        assert_eq!((c.width(), c.height()), (60, 70));
    }

    #[test]
    fn crop_of_full_frame_is_identity() {
        let pixels = (0..100 * 100).map(|i| [(i % 251) as u8, (i % 241) as u8, 7]).collect();
        let frame = Frame::new(100, 100, pixels).unwrap();
        let c = crop_face(&frame, &pts((0, 0), (100, 100)), 0.4).unwrap();
        assert_eq!(c, frame);
    }

    #[test]
    fn crop_clamps_extension_at_top() {
        // Height 15, extension 6 would reach row -1.
        let b = face_box(64, 64, &pts((10, 5), (30, 20)), 0.4).unwrap();
        assert_eq!(b.y0, 0);
        assert_eq!(b.y1, 20);
    }

    #[test]
    fn crop_errors() {
        assert!(matches!(
            face_box(10, 10, &[Point::new(1, 1), Point::new(2, 2)], 0.4),
            Err(FeatureError::TooFewPoints(2))
        ));
        assert!(matches!(
            face_box(10, 10, &pts((-1, 1), (5, 5)), 0.4),
            Err(FeatureError::PointOutOfBounds { .. })
        ));
        let flat = vec![Point::new(1, 4), Point::new(5, 4), Point::new(3, 4)];
        assert!(matches!(
            face_box(10, 10, &flat, 0.4),
            Err(FeatureError::DegenerateBox { .. })
        ));
    }

    #[test]
    fn green_extraction() {
        let f = Frame::filled(3, 2, [10, 200, 30]).unwrap();
        assert!(extract_green(&f).values().iter().all(|&v| v == 200.0));
        let f = Frame::new(2, 1, vec![[0, 0, 0], [0, 255, 0]]).unwrap();
        assert_eq!(extract_green(&f).values(), &[0.0, 255.0]);
    }

    #[test]
    fn downsample_constant_and_identity() {
        for (w, h) in [(20, 20), (37, 53), (64, 41)] {
            let out = downsample(&plane(w, h, |_, _| 128.0)).unwrap();
            assert_eq!(out.len(), FEATURES);
            assert!(out.iter().all(|&v| (v - 128.0).abs() < 1e-12), "{w}x{h}");
        }
        let p = plane(20, 20, |x, y| (x * 7 + y * 3) as f64);
        assert_eq!(downsample(&p).unwrap(), p.values());
    }

    #[test]
    fn downsample_matches_block_means_on_40x40() {
        let p = plane(40, 40, |x, y| ((x * 31 + y * 17) % 256) as f64);
        let out = downsample(&p).unwrap();
        for cy in 0..20 {
            for cx in 0..20 {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += p.values()[(2 * cy + dy) * 40 + 2 * cx + dx];
                    }
                }
                assert!((out[cy * 20 + cx] - s / 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_fractional_cells_match_replicated_plane() {
        // Upsample a 21x21 plane 20x by pixel replication: the 420x420 copy has
        // integer cell boundaries (21 px per cell) and must give the same result.
        let small = plane(21, 21, |x, y| ((x * 13 + y * 29) % 200) as f64);
        let big = plane(420, 420, |x, y| small.values()[(y / 20 * 21 + x / 20) as usize]);
        let a = downsample(&small).unwrap();
        let b = downsample(&big).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn downsample_rejects_small_planes() {
        assert!(matches!(
            downsample(&plane(19, 40, |_, _| 0.0)),
            Err(FeatureError::PlaneTooSmall { .. })
        ));
    }

    #[test]
    fn normalization() {
        let ones = normalize(&[255.0; FEATURES]).unwrap();
        assert!(ones.values().iter().all(|&v| v == 1.0));
        let zeros = normalize(&[0.0; FEATURES]).unwrap();
        assert!(zeros.values().iter().all(|&v| v == 0.0));
        assert_eq!(normalize(&[127.5; FEATURES]).unwrap().values()[0], 0.5);
        let mut bad = [0.0; FEATURES];
        bad[5] = 256.0;
        assert!(matches!(
            normalize(&bad),
            Err(FeatureError::IntensityOutOfRange { index: 5, .. })
        ));
        assert!(normalize(&[0.0; 10]).is_err());
    }

    #[test]
    fn constant_green_sequence() {
        let frames = vec![Frame::filled(40, 40, [9, 51, 200]).unwrap(); 5];
        let seq = FrameSequence::new(frames, 30.0, "s", Activity::Rest).unwrap();
        let lms = LandmarkSet::new(vec![pts((0, 0), (40, 40))]).unwrap();
        let m = sequence_to_features(&seq, &lms, 0.4).unwrap();
        assert_eq!(m.rows().dim(), (5, FEATURES));
        assert!(m.rows().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn sequence_errors_carry_frame_index() {
        let frames = vec![Frame::filled(40, 40, [0, 0, 0]).unwrap(); 3];
        let seq = FrameSequence::new(frames, 30.0, "s", Activity::Rest).unwrap();
        let good = pts((0, 0), (40, 40));
        let tiny = pts((0, 0), (10, 10));
        let lms = LandmarkSet::new(vec![good.clone(), good, tiny]).unwrap();
        match sequence_to_features(&seq, &lms, 0.4) {
            Err(FeatureError::AtFrame { index: 2, source }) => {
                assert!(matches!(*source, FeatureError::PlaneTooSmall { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
        let two = LandmarkSet::new(vec![pts((0, 0), (40, 40)); 2]).unwrap();
        assert!(matches!(
            sequence_to_features(&seq, &two, 0.4),
            Err(FeatureError::LandmarkCount(2, 3))
        ));
    }

    #[test]
    fn binary_matrix_layout() {
        let rows = Array2::from_shape_fn((2, FEATURES), |(r, c)| (r * FEATURES + c) as f64 / 1000.0);
        let bytes = encode_matrix(&rows);
        assert_eq!(&bytes[..4], b"PCFM");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &400u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &0.0f64.to_le_bytes());
        assert_eq!(&bytes[24..32], &0.001f64.to_le_bytes());
        assert_eq!(decode_matrix(&bytes).unwrap(), rows);
        assert!(decode_matrix(&bytes[..40]).is_err());
        assert!(decode_matrix(b"XXXX000000000000").is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = FeatureMatrix::new(Array2::from_elem((3, FEATURES), 0.25), "s02", Activity::Exercise)
            .unwrap();
        write_matrix_csv(&path, &m).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("subject_id,activity,frame_index,f0,f1,"));
        assert!(header.ends_with(",f399"));
        let row: Vec<&str> = lines.nth(2).unwrap().split(',').collect();
        assert_eq!(&row[..3], &["s02", "exercise", "2"]);
        assert_eq!(row.len(), 403);
    }

    proptest! {
        #[test]
        fn features_stay_in_unit_range(
            w in 20u32..48, h in 20u32..48, seed in any::<u64>(),
        ) {
            let mut state = seed;
            let pixels = (0..w * h).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let b = (state >> 33).to_le_bytes();
                [b[0], b[1], b[2]]
            }).collect();
            let frame = Frame::new(w, h, pixels).unwrap();
            let v = frame_features(&frame, &pts((0, 0), (w as i32, h as i32)), 0.4).unwrap();
            prop_assert_eq!(v.values().len(), FEATURES);
            prop_assert!(v.values().iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn downsampling_preserves_mean_on_multiples_of_20(
            kx in 1u32..4, ky in 1u32..4, seed in any::<u64>(),
        ) {
            let p = plane(20 * kx, 20 * ky, |x, y| {
                ((seed ^ (x as u64 * 0x9E37_79B9) ^ (y as u64 * 0x85EB_CA6B)) % 256) as f64
            });
            let out = downsample(&p).unwrap();
            let m_out = out.iter().sum::<f64>() / out.len() as f64;
            prop_assert!((m_out - p.mean()).abs() <= 1e-9 * p.mean().abs().max(1.0));
        }

        #[test]
        fn crop_never_grows(
            x0 in 0i32..60, y0 in 0i32..60, dx in 1i32..40, dy in 1i32..40, ext in 0.0f64..2.0,
        ) {
            let frame = Frame::filled(64, 64, [0, 0, 0]).unwrap();
            let p = pts((x0, y0), ((x0 + dx).min(64), (y0 + dy).min(64)));
            if let Ok(c) = crop_face(&frame, &p, ext) {
                prop_assert!(c.width() <= 64 && c.height() <= 64);
            }
        }
    }
}
