//! Pole observations from semantic segmentation masks.
//!
//! Three passes: binarize the mask against the pole classes, keep columns with
//! at least `c1` pole pixels, then emit one observation at the centre of every
//! run of kept columns whose width lies in `[c2, c3]`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{parse_finite, SemanticLabel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    /// Row-major class ids.
    pub class_ids: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, class_ids: Vec<u8>) -> Result<Self> {
        if class_ids.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "mask grid has {} cells, expected {}x{}",
                class_ids.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            class_ids,
        })
    }

    pub fn filled(width: usize, height: usize, class_id: u8) -> Self {
        Self {
            width,
            height,
            class_ids: vec![class_id; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.class_ids[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class_id: u8) {
        self.class_ids[y * self.width + x] = class_id;
    }

    /// Serializes as a binary PGM (P5) with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.class_ids);
        out
    }
}

/// Pole / background mask. Pole cells remember their source class so groups
/// can be labelled after the column pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    classes: Vec<Option<u8>>,
}

impl BinaryMask {
    /// 1 for pole cells, 0 otherwise.
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.classes[y * self.width + x].is_some() as u8
    }

    pub fn class_at(&self, x: usize, y: usize) -> Option<u8> {
        self.classes[y * self.width + x]
    }

    pub fn ones(&self) -> usize {
        self.classes.iter().filter(|c| c.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Column centre in pixels.
    pub u: f64,
    pub label: SemanticLabel,
    pub group_width: u32,
    pub pixel_count: u32,
}

impl Observation {
    pub fn new(u: f64, label: SemanticLabel) -> Self {
        Self {
            u,
            label,
            group_width: 1,
            pixel_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionParams {
    /// Minimum pole pixels for a column to survive.
    pub c1: u32,
    /// Minimum group width.
    pub c2: u32,
    /// Maximum group width.
    pub c3: u32,
    pub label_map: BTreeMap<u8, SemanticLabel>,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            c1: 60,
            c2: 1,
            c3: 15,
            label_map: default_label_map(),
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<()> {
        if self.c1 < 1 {
            return Err(Error::InvalidParameter("c1 must be >= 1".into()));
        }
        if self.c2 > self.c3 {
            return Err(Error::InvalidParameter(format!(
                "c2 ({}) must not exceed c3 ({})",
                self.c2, self.c3
            )));
        }
        Ok(())
    }
}

/// Class ids used by the simulator's mask renderer and the CLI defaults.
pub fn default_label_map() -> BTreeMap<u8, SemanticLabel> {
    BTreeMap::from([
        (1, SemanticLabel::Pole),
        (2, SemanticLabel::Lamp),
        (3, SemanticLabel::TreeTrunk),
        (4, SemanticLabel::TrafficSign),
        (5, SemanticLabel::Other),
    ])
}

/// Parses `7:Pole,9:TreeTrunk`.
pub fn parse_label_map(text: &str) -> Result<BTreeMap<u8, SemanticLabel>> {
    let mut out = BTreeMap::new();
    for entry in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (id, label) = entry
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("label_map entry {entry:?} is not id:Label")))?;
        let id: u8 = id
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("invalid class id in {entry:?}")))?;
        let label: SemanticLabel = label
            .trim()
            .parse()
            .map_err(|e| Error::InvalidParameter(format!("{e}")))?;
        out.insert(id, label);
    }
    Ok(out)
}

pub fn binarize(mask: &SegmentationMask, params: &ExtractionParams) -> BinaryMask {
    BinaryMask {
        width: mask.width,
        height: mask.height,
        classes: mask
            .class_ids
            .iter()
            .map(|c| params.label_map.contains_key(c).then_some(*c))
            .collect(),
    }
}

pub fn extract_poles(binary: &BinaryMask, params: &ExtractionParams) -> Vec<Observation> {
    let width = binary.width;
    let mut column_counts = vec![0u32; width];
    for y in 0..binary.height {
        for (x, count) in column_counts.iter_mut().enumerate() {
            *count += binary.get(x, y) as u32;
        }
    }

    let mut out = Vec::new();
    let mut x = 0;
    while x < width {
        if column_counts[x] < params.c1 {
            x += 1;
            continue;
        }
        let first = x;
        while x < width && column_counts[x] >= params.c1 {
            x += 1;
        }
        let last = x - 1;
        let group_width = (last - first + 1) as u32;
        if group_width < params.c2 || group_width > params.c3 {
            continue;
        }
        if let Some(label) = majority_label(binary, first, last, params) {
            out.push(Observation {
                u: (first + last) as f64 / 2.0,
                label,
                group_width,
                pixel_count: column_counts[first..=last].iter().sum(),
            });
        }
    }
    out
}

/// Label of the most frequent pole class in columns `first..=last`; ties go to
/// the smaller class id.
fn majority_label(
    binary: &BinaryMask,
    first: usize,
    last: usize,
    params: &ExtractionParams,
) -> Option<SemanticLabel> {
    let mut counts: BTreeMap<u8, u32> = BTreeMap::new();
    for y in 0..binary.height {
        for x in first..=last {
            if let Some(class) = binary.class_at(x, y) {
                *counts.entry(class).or_default() += 1;
            }
        }
    }
    let mut best: Option<(u8, u32)> = None;
    // BTreeMap iterates by ascending id, so strict `>` keeps the smaller id on ties.
    for (class, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((class, count));
        }
    }
    best.and_then(|(class, _)| params.label_map.get(&class).copied())
}

pub fn extract_from_mask(mask: &SegmentationMask, params: &ExtractionParams) -> Vec<Observation> {
    extract_poles(&binarize(mask, params), params)
}

/// Reads a binary PGM (P5, maxval <= 255) whose pixel values are class ids.
pub fn load_mask(path: &Path) -> Result<SegmentationMask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|m| Error::format(path, m))
}

/// Mask files of `dir` in lexicographic order. Every regular file counts;
/// a non-PGM file is reported by `extract_directory`.
pub fn mask_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Extracts every mask of `dir`; frame `k` is the k-th file in order.
pub fn extract_directory(dir: &Path, params: &ExtractionParams) -> Result<Vec<Vec<Observation>>> {
    mask_files(dir)?
        .iter()
        .map(|path| load_mask(path).map(|mask| extract_from_mask(&mask, params)))
        .collect()
}

pub fn parse_pgm(bytes: &[u8]) -> Result<SegmentationMask, String> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        tokens.push(&bytes[start..pos]);
    }
    match tokens[0] {
        b"P5" => {}
        b"P2" => return Err("ASCII PGM (P2) is not supported, expected P5".into()),
        other => return Err(format!("bad magic {:?}, expected P5", String::from_utf8_lossy(other))),
    }
    let number = |tok: &[u8], what: &str| -> Result<usize, String> {
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| format!("invalid {what} {:?}", String::from_utf8_lossy(tok)))
    };
    let width = number(tokens[1], "width")?;
    let height = number(tokens[2], "height")?;
    let maxval = number(tokens[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("invalid dimensions {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} unsupported, expected 1..=255"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err("truncated PGM header".into());
    }
    pos += 1;
    let len = width * height;
    let payload = &bytes[pos..];
    if payload.len() < len {
        return Err(format!("truncated payload: {} of {} bytes", payload.len(), len));
    }
    Ok(SegmentationMask {
        width,
        height,
        class_ids: payload[..len].to_vec(),
    })
}

pub const OBSERVATIONS_HEADER: &str = "frame,u_px,label,group_width,pixel_count";

pub fn write_observations<W: Write>(mut out: W, frames: &[Vec<Observation>]) -> std::io::Result<()> {
    writeln!(out, "{OBSERVATIONS_HEADER}")?;
    for (frame, observations) in frames.iter().enumerate() {
        for obs in observations {
            writeln!(
                out,
                "{},{},{},{},{}",
                frame, obs.u, obs.label, obs.group_width, obs.pixel_count
            )?;
        }
    }
    Ok(())
}

/// Reads an observations CSV into per-frame lists sorted by `u`. The result has
/// `max(frame) + 1` entries; frames without rows are empty.
pub fn load_observations(path: &Path) -> Result<Vec<Vec<Observation>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_observations(&text, path)
}

pub fn parse_observations(text: &str, path: &Path) -> Result<Vec<Vec<Observation>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>().join(",") != OBSERVATIONS_HEADER {
        return Err(Error::parse(path, 1, format!("expected header `{OBSERVATIONS_HEADER}`")));
    }
    let mut frames: Vec<Vec<Observation>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |what: &str| Error::parse(path, line, format!("invalid {what}"));
        let frame: usize = record[0].parse().map_err(|_| bad("frame"))?;
        let u = parse_finite(&record[1], "u_px").map_err(|m| Error::parse(path, line, m))?;
        let label: SemanticLabel = record[2]
            .parse()
            .map_err(|e: crate::map::UnknownLabel| Error::parse(path, line, e.to_string()))?;
        let group_width: u32 = record[3].parse().map_err(|_| bad("group_width"))?;
        let pixel_count: u32 = record[4].parse().map_err(|_| bad("pixel_count"))?;
        if frames.len() <= frame {
            frames.resize_with(frame + 1, Vec::new);
        }
        frames[frame].push(Observation {
            u,
            label,
            group_width,
            pixel_count,
        });
    }
    for observations in &mut frames {
        observations.sort_by(|a, b| a.u.total_cmp(&b.u));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pole_params() -> ExtractionParams {
        ExtractionParams {
            label_map: BTreeMap::from([(7, SemanticLabel::Pole), (9, SemanticLabel::TreeTrunk)]),
            ..ExtractionParams::default()
        }
    }

    fn paint_columns(mask: &mut SegmentationMask, cols: std::ops::RangeInclusive<usize>, rows: usize, class: u8) {
        for x in cols {
            for y in 0..rows {
                mask.set(x, y, class);
            }
        }
    }

    #[test]
    fn binarize_marks_pole_classes() {
        let params = pole_params();
        let zeros = SegmentationMask::filled(8, 8, 0);
        assert_eq!(binarize(&zeros, &params).ones(), 0);

        let mut one = zeros.clone();
        one.set(3, 4, 7);
        let b = binarize(&one, &params);
        assert_eq!(b.ones(), 1);
        assert_eq!(b.get(3, 4), 1);

        let mut mixed = zeros.clone();
        mixed.set(0, 0, 7);
        mixed.set(1, 0, 9);
        mixed.set(2, 0, 3);
        assert_eq!(binarize(&mixed, &params).ones(), 2);
    }

    #[test]
    fn accepts_narrow_tall_group() {
        let params = pole_params();
        let mut mask = SegmentationMask::filled(100, 100, 0);
        paint_columns(&mut mask, 10..=12, 70, 7);
        let obs = extract_from_mask(&mask, &params);
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].u, 11.0);
        assert_eq!(obs[0].group_width, 3);
        assert_eq!(obs[0].pixel_count, 210);
        assert_eq!(obs[0].label, SemanticLabel::Pole);
    }

    #[test]
    fn rejects_wide_group_and_short_column() {
        let params = pole_params();
        let mut mask = SegmentationMask::filled(100, 100, 0);
        paint_columns(&mut mask, 40..=59, 100, 7);
        paint_columns(&mut mask, 80..=80, 30, 7);
        assert!(extract_from_mask(&mask, &params).is_empty());
    }

    #[test]
    fn even_width_group_has_half_pixel_centre() {
        let params = pole_params();
        let mut mask = SegmentationMask::filled(50, 80, 0);
        paint_columns(&mut mask, 20..=23, 80, 7);
        assert_eq!(extract_from_mask(&mask, &params)[0].u, 21.5);
    }

    #[test]
    fn border_columns_are_ordinary() {
        let params = pole_params();
        let mut mask = SegmentationMask::filled(30, 80, 0);
        paint_columns(&mut mask, 0..=1, 80, 7);
        paint_columns(&mut mask, 29..=29, 80, 9);
        let obs = extract_from_mask(&mask, &params);
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].u, 0.5);
        assert_eq!(obs[1].u, 29.0);
        assert_eq!(obs[1].label, SemanticLabel::TreeTrunk);
    }

    #[test]
    fn mixed_group_takes_majority_then_smaller_id() {
        let params = pole_params();
        let mut mask = SegmentationMask::filled(40, 100, 0);
        paint_columns(&mut mask, 5..=5, 100, 7);
        paint_columns(&mut mask, 6..=7, 100, 9);
        assert_eq!(extract_from_mask(&mask, &params)[0].label, SemanticLabel::TreeTrunk);

        let mut tie = SegmentationMask::filled(40, 100, 0);
        paint_columns(&mut tie, 5..=5, 100, 9);
        paint_columns(&mut tie, 6..=6, 100, 7);
        assert_eq!(extract_from_mask(&tie, &params)[0].label, SemanticLabel::Pole);
    }

    #[test]
    fn pgm_parsing() {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend([0u8; 16]);
        let mask = parse_pgm(&bytes).unwrap();
        assert_eq!((mask.width, mask.height), (4, 4));
        assert!(mask.class_ids.iter().all(|&c| c == 0));

        let commented = b"P5 # mask\n# size\n2 1 255\n\x07\x00".to_vec();
        assert_eq!(parse_pgm(&commented).unwrap().class_ids, vec![7, 0]);

        let mut truncated = b"P5\n4 4\n255\n".to_vec();
        truncated.extend([0u8; 10]);
        assert!(parse_pgm(&truncated).unwrap_err().contains("truncated"));

        let ascii = b"P2\n2 2\n255\n0 0 0 0\n";
        assert!(parse_pgm(ascii).unwrap_err().contains("P2"));
        assert!(parse_pgm(b"P5\n0 4\n255\n").is_err());
        assert!(parse_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let mut mask = SegmentationMask::filled(5, 3, 0);
        mask.set(4, 2, 200);
        assert_eq!(parse_pgm(&mask.to_pgm()).unwrap(), mask);
    }

    #[test]
    fn observations_csv_round_trip() {
        let frames = vec![
            vec![Observation { u: 11.0, label: SemanticLabel::Pole, group_width: 3, pixel_count: 210 }],
            vec![],
            vec![
                Observation { u: 0.125, label: SemanticLabel::Lamp, group_width: 1, pixel_count: 60 },
                Observation { u: 300.5, label: SemanticLabel::Other, group_width: 2, pixel_count: 99 },
            ],
        ];
        let mut buf = Vec::new();
        write_observations(&mut buf, &frames).unwrap();
        let back = parse_observations(std::str::from_utf8(&buf).unwrap(), Path::new("o.csv")).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn label_map_parsing() {
        let m = parse_label_map("7:Pole, 9:TreeTrunk").unwrap();
        assert_eq!(m[&9], SemanticLabel::TreeTrunk);
        assert!(parse_label_map("7:Car").is_err());
        assert!(parse_label_map("x:Pole").is_err());
    }

    fn random_mask() -> impl Strategy<Value = SegmentationMask> {
        (1usize..40, 1usize..20).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop_oneof![4 => Just(0u8), 2 => Just(7u8), 1 => Just(9u8)], w * h)
                .prop_map(move |ids| SegmentationMask::new(w, h, ids).unwrap())
        })
    }

    proptest! {
        #[test]
        fn observation_count_bounded_and_labels_mapped(mask in random_mask(), c1 in 1u32..10, c2 in 1u32..4) {
            let params = ExtractionParams { c1, c2, c3: c2 + 5, ..pole_params() };
            let obs = extract_from_mask(&mask, &params);
            prop_assert!(obs.len() <= mask.width / c2 as usize);
            for o in &obs {
                prop_assert!(params.label_map.values().any(|l| *l == o.label));
                prop_assert!(o.u >= 0.0 && o.u < mask.width as f64);
                prop_assert!(o.group_width >= 1);
            }
            prop_assert_eq!(obs.clone(), extract_from_mask(&mask, &params));
        }

        #[test]
        fn horizontal_shift_moves_every_centre(mask in random_mask(), k in 0usize..10) {
            let params = ExtractionParams { c1: 2, ..pole_params() };
            // pad both sides so content stays away from the borders
            let pad = 12;
            let width = mask.width + 2 * pad;
            let mut base = SegmentationMask::filled(width, mask.height, 0);
            let mut shifted = base.clone();
            for y in 0..mask.height {
                for x in 0..mask.width {
                    base.set(x + 1, y, mask.get(x, y));
                    shifted.set(x + 1 + k, y, mask.get(x, y));
                }
            }
            let a = extract_from_mask(&base, &params);
            let b = extract_from_mask(&shifted, &params);
            prop_assert_eq!(a.len(), b.len());
            for (a, b) in a.iter().zip(&b) {
                prop_assert_eq!(a.u + k as f64, b.u);
                prop_assert_eq!(a.label, b.label);
            }
        }
    }
}
