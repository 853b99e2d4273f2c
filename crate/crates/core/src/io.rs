//! Line-oriented text formats.
//!
//! Every file starts with a versioned header line. Reals are written with 17
//! significant digits (`{:.16e}`), which reads back to the same `f64`.
//!
//! Ground truth (`probdet-gt v1`):
//! ```text
//! probdet-gt v1
//! frame <id> <width> <height> <n_objects>
//! object <class> <x1> <y1> <x2> <y2> [rle <y> <x0> <len> ...]
//! ```
//! Detection dump, raw samples or fused boxes:
//! ```text
//! probdet-dump v1 shape=raw classes=<C> samples=<N>
//! frame <id> <n_detections>
//! detection
//! sample <cx> <cy> <w> <h> <obj> <p0> .. <pC-1>      (N lines)
//!
//! probdet-dump v1 shape=fused classes=<C>
//! frame <id> <n_detections>
//! box <x1> <y1> <x2> <y2> <xx> <xy> <yy> <xx> <xy> <yy> <q0> .. <qC-1>
//! ```
//! Blank lines and lines starting with `#` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::fusion::SampleSet;
use crate::geom::{BBox, Corner, CovMatrix2, Frame, GeomError, GroundTruthObject, Mask, ProbBox, RawBox};
use crate::pdq::{EvalReport, FrameTally, MapScore, PairQuality, TruePositive};
use crate::robustness::{Metric, PerformanceGrid};

pub const GT_HEADER: &str = "probdet-gt v1";
pub const DUMP_MAGIC: &str = "probdet-dump v1";
pub const REPORT_HEADER: &str = "probdet-report v1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl IoError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, IoError>;

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_owned(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| IoError::File {
        path: path.to_owned(),
        source,
    })
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_reals(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.push(' ');
        out.push_str(&real(v));
    }
}

type TokenLines<'a> = Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>;

/// Tokenized non-blank, non-comment lines with their 1-based numbers.
struct Lines<'a> {
    inner: std::iter::Peekable<TokenLines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: TokenLines<'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
                .map(|(i, l)| (i, l.split_whitespace().collect())),
        );
        Self {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        let item = self.inner.next();
        if let Some((n, _)) = &item {
            self.last = *n;
        }
        item
    }

    fn expect(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        self.next()
            .ok_or_else(|| IoError::at(self.last + 1, format!("unexpected end of file, expected {what}")))
    }

    fn expect_tag(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, toks) = self.expect(&format!("`{tag}` line"))?;
        if toks[0] != tag {
            return Err(IoError::at(n, format!("expected `{tag}`, found `{}`", toks[0])));
        }
        Ok((n, toks))
    }
}

fn parse<T: std::str::FromStr>(line: usize, what: &str, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| IoError::at(line, format!("invalid {what} `{tok}`")))
}

fn parse_reals(line: usize, toks: &[&str]) -> Result<Vec<f64>> {
    toks.iter()
        .map(|t| {
            let v: f64 = parse(line, "number", t)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(IoError::at(line, format!("non-finite number `{t}`")))
            }
        })
        .collect()
}

fn arity(line: usize, toks: &[&str], want: usize, what: &str) -> Result<()> {
    if toks.len() != want {
        return Err(IoError::at(
            line,
            format!("{what} needs {} fields, found {}", want - 1, toks.len() - 1),
        ));
    }
    Ok(())
}

fn geom(line: usize) -> impl Fn(GeomError) -> IoError {
    move |e| IoError::at(line, e.to_string())
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(IoError::Format(format!(
            "frame id `{id}` must be non-empty without whitespace"
        )));
    }
    Ok(())
}

fn duplicate_check(seen: &mut BTreeSet<String>, id: &str, line: usize) -> Result<()> {
    if !seen.insert(id.to_owned()) {
        return Err(IoError::at(line, format!("duplicate frame id `{id}`")));
    }
    Ok(())
}

// ---------------------------------------------------------------- ground truth

/// Writes ground truth. Masks that are exactly the box pixels are omitted.
pub fn write_ground_truth(frames: &[Frame]) -> Result<String> {
    let mut out = String::from(GT_HEADER);
    out.push('\n');
    for f in frames {
        check_id(&f.frame_id)?;
        writeln!(
            out,
            "frame {} {} {} {}",
            f.frame_id,
            f.width,
            f.height,
            f.ground_truths.len()
        )
        .unwrap();
        for g in &f.ground_truths {
            let (tl, br) = (g.bbox.tl(), g.bbox.br());
            out.push_str(&format!("object {}", g.class_id));
            push_reals(&mut out, [tl.x, tl.y, br.x, br.y]);
            let box_mask = Mask::from_rect(g.box_pixels(f.width, f.height)).ok();
            if box_mask.as_ref() != Some(&g.mask) {
                out.push_str(" rle");
                for (y, x0, len) in g.mask.to_runs() {
                    write!(out, " {y} {x0} {len}").unwrap();
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn read_ground_truth(text: &str) -> Result<Vec<Frame>> {
    let mut lines = Lines::new(text);
    let (n, toks) = lines.expect("header")?;
    if toks.join(" ") != GT_HEADER {
        return Err(IoError::at(n, format!("expected header `{GT_HEADER}`")));
    }
    let mut frames = Vec::new();
    let mut seen = BTreeSet::new();
    while let Some((n, toks)) = lines.next() {
        if toks[0] != "frame" {
            return Err(IoError::at(n, format!("expected `frame`, found `{}`", toks[0])));
        }
        arity(n, &toks, 5, "frame")?;
        duplicate_check(&mut seen, toks[1], n)?;
        let width: u32 = parse(n, "width", toks[2])?;
        let height: u32 = parse(n, "height", toks[3])?;
        let count: usize = parse(n, "object count", toks[4])?;
        let mut frame = Frame::new(toks[1], width, height).map_err(geom(n))?;
        for _ in 0..count {
            let (n, toks) = lines.expect_tag("object")?;
            if toks.len() < 6 {
                return Err(IoError::at(n, "object needs a class and 4 box coordinates"));
            }
            let class_id: usize = parse(n, "class id", toks[1])?;
            let c = parse_reals(n, &toks[2..6])?;
            let bbox = BBox::from_xyxy(c[0], c[1], c[2], c[3]).map_err(geom(n))?;
            if !bbox.inside_frame(width as f64, height as f64) {
                return Err(IoError::at(
                    n,
                    format!("box {c:?} lies outside the {width}x{height} frame"),
                ));
            }
            let mask = match toks.get(6) {
                None => Mask::from_rect(bbox.pixel_rect(width, height)).map_err(geom(n))?,
                Some(&"rle") => {
                    let rest = &toks[7..];
                    if rest.is_empty() || rest.len() % 3 != 0 {
                        return Err(IoError::at(n, "rle needs a non-empty list of (y, x0, len) triples"));
                    }
                    let runs = rest
                        .chunks(3)
                        .map(|t| {
                            Ok((
                                parse(n, "row", t[0])?,
                                parse(n, "column", t[1])?,
                                parse(n, "run length", t[2])?,
                            ))
                        })
                        .collect::<Result<Vec<(u32, u32, u32)>>>()?;
                    Mask::from_runs(&runs).map_err(geom(n))?
                }
                Some(other) => return Err(IoError::at(n, format!("expected `rle`, found `{other}`"))),
            };
            let gt = GroundTruthObject { class_id, bbox, mask };
            gt.validate(width, height).map_err(geom(n))?;
            frame.ground_truths.push(gt);
        }
        frames.push(frame);
    }
    Ok(frames)
}

// ---------------------------------------------------------------- detection dumps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpShape {
    Raw,
    Fused,
}

impl DumpShape {
    pub fn name(&self) -> &'static str {
        match self {
            DumpShape::Raw => "raw",
            DumpShape::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub frame_id: String,
    pub sets: Vec<SampleSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFrameDump {
    pub frame_id: String,
    pub boxes: Vec<ProbBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dump {
    Raw {
        classes: usize,
        samples: usize,
        frames: Vec<RawFrame>,
    },
    Fused {
        classes: usize,
        frames: Vec<FusedFrameDump>,
    },
}

impl Dump {
    pub fn shape(&self) -> DumpShape {
        match self {
            Dump::Raw { .. } => DumpShape::Raw,
            Dump::Fused { .. } => DumpShape::Fused,
        }
    }

    pub fn frame_ids(&self) -> Vec<&str> {
        match self {
            Dump::Raw { frames, .. } => frames.iter().map(|f| f.frame_id.as_str()).collect(),
            Dump::Fused { frames, .. } => frames.iter().map(|f| f.frame_id.as_str()).collect(),
        }
    }
}

pub fn write_raw_dump(classes: usize, samples: usize, frames: &[RawFrame]) -> Result<String> {
    let mut out = format!("{DUMP_MAGIC} shape=raw classes={classes} samples={samples}\n");
    for f in frames {
        check_id(&f.frame_id)?;
        writeln!(out, "frame {} {}", f.frame_id, f.sets.len()).unwrap();
        for set in &f.sets {
            if set.len() != samples || set.num_classes() != classes {
                return Err(IoError::Format(format!(
                    "frame {}: sample set with {} samples of {} classes in a file declaring {samples} and {classes}",
                    f.frame_id,
                    set.len(),
                    set.num_classes()
                )));
            }
            out.push_str("detection\n");
            for s in set.samples() {
                out.push_str("sample");
                push_reals(&mut out, [s.cx, s.cy, s.width, s.height, s.objectness]);
                push_reals(&mut out, s.class_scores.iter().copied());
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn write_fused_dump(classes: usize, frames: &[FusedFrameDump]) -> Result<String> {
    let mut out = format!("{DUMP_MAGIC} shape=fused classes={classes}\n");
    for f in frames {
        check_id(&f.frame_id)?;
        writeln!(out, "frame {} {}", f.frame_id, f.boxes.len()).unwrap();
        for b in &f.boxes {
            if b.num_classes() != classes {
                return Err(IoError::Format(format!(
                    "frame {}: box with {} classes in a file declaring {classes}",
                    f.frame_id,
                    b.num_classes()
                )));
            }
            out.push_str("box");
            push_reals(
                &mut out,
                [
                    b.tl.x,
                    b.tl.y,
                    b.br.x,
                    b.br.y,
                    b.cov_tl.xx(),
                    b.cov_tl.xy(),
                    b.cov_tl.yy(),
                    b.cov_br.xx(),
                    b.cov_br.xy(),
                    b.cov_br.yy(),
                ],
            );
            push_reals(&mut out, b.label_probs.iter().copied());
            out.push('\n');
        }
    }
    Ok(out)
}

fn header_field<'a>(line: usize, toks: &[&'a str], key: &str) -> Result<&'a str> {
    toks.iter()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| IoError::at(line, format!("header is missing `{key}=`")))
}

pub fn read_dump(text: &str) -> Result<Dump> {
    let mut lines = Lines::new(text);
    let (n, toks) = lines.expect("header")?;
    if toks.len() < 2 || format!("{} {}", toks[0], toks[1]) != DUMP_MAGIC {
        return Err(IoError::at(n, format!("expected header starting with `{DUMP_MAGIC}`")));
    }
    let classes: usize = parse(n, "class count", header_field(n, &toks, "classes")?)?;
    if classes == 0 {
        return Err(IoError::at(n, "classes must be at least 1"));
    }
    match header_field(n, &toks, "shape")? {
        "raw" => {
            let samples: usize = parse(n, "sample count", header_field(n, &toks, "samples")?)?;
            if samples == 0 {
                return Err(IoError::at(n, "samples must be at least 1"));
            }
            let frames = read_frames(&mut lines, |lines| {
                lines.expect_tag("detection")?;
                let boxes = (0..samples)
                    .map(|_| {
                        let (n, toks) = lines.expect_tag("sample")?;
                        arity(n, &toks, 6 + classes, "sample")?;
                        let v = parse_reals(n, &toks[1..])?;
                        RawBox::new(v[0], v[1], v[2], v[3], v[4], v[5..].to_vec()).map_err(geom(n))
                    })
                    .collect::<Result<Vec<_>>>()?;
                SampleSet::new(boxes).map_err(|e| IoError::at(lines.last, e.to_string()))
            })?;
            Ok(Dump::Raw {
                classes,
                samples,
                frames: frames
                    .into_iter()
                    .map(|(frame_id, sets)| RawFrame { frame_id, sets })
                    .collect(),
            })
        }
        "fused" => {
            let frames = read_frames(&mut lines, |lines| {
                let (n, toks) = lines.expect_tag("box")?;
                arity(n, &toks, 11 + classes, "box")?;
                let v = parse_reals(n, &toks[1..])?;
                let b = ProbBox {
                    tl: Corner::new(v[0], v[1]),
                    br: Corner::new(v[2], v[3]),
                    cov_tl: CovMatrix2::symmetric(v[4], v[5], v[6]),
                    cov_br: CovMatrix2::symmetric(v[7], v[8], v[9]),
                    label_probs: v[10..].to_vec(),
                };
                b.validate().map_err(geom(n))?;
                Ok(b)
            })?;
            Ok(Dump::Fused {
                classes,
                frames: frames
                    .into_iter()
                    .map(|(frame_id, boxes)| FusedFrameDump { frame_id, boxes })
                    .collect(),
            })
        }
        other => Err(IoError::at(
            n,
            format!("unknown shape `{other}`, expected raw or fused"),
        )),
    }
}

fn read_frames<'a, T>(
    lines: &mut Lines<'a>,
    mut entry: impl FnMut(&mut Lines<'a>) -> Result<T>,
) -> Result<Vec<(String, Vec<T>)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    while let Some((n, toks)) = lines.next() {
        if toks[0] != "frame" {
            return Err(IoError::at(n, format!("expected `frame`, found `{}`", toks[0])));
        }
        arity(n, &toks, 3, "frame")?;
        duplicate_check(&mut seen, toks[1], n)?;
        let count: usize = parse(n, "detection count", toks[2])?;
        let items = (0..count).map(|_| entry(lines)).collect::<Result<Vec<_>>>()?;
        out.push((toks[1].to_owned(), items));
    }
    Ok(out)
}

/// Attaches fused detections to ground-truth frames. Both sides must cover
/// exactly the same frame ids.
pub fn attach_detections(mut gt: Vec<Frame>, dets: Vec<FusedFrameDump>) -> Result<Vec<Frame>> {
    let mut by_id: BTreeMap<String, Vec<ProbBox>> = dets.into_iter().map(|f| (f.frame_id, f.boxes)).collect();
    let gt_ids: BTreeSet<&str> = gt.iter().map(|f| f.frame_id.as_str()).collect();
    let missing: Vec<&str> = gt_ids.iter().filter(|id| !by_id.contains_key(**id)).copied().collect();
    let extra: Vec<&str> = by_id
        .keys()
        .map(String::as_str)
        .filter(|id| !gt_ids.contains(id))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut msg = String::from("frame ids differ between ground truth and detections");
        if !missing.is_empty() {
            write!(msg, "; missing from detections: {}", missing.join(", ")).unwrap();
        }
        if !extra.is_empty() {
            write!(msg, "; missing from ground truth: {}", extra.join(", ")).unwrap();
        }
        return Err(IoError::Format(msg));
    }
    for f in &mut gt {
        f.detections = by_id.remove(&f.frame_id).unwrap_or_default();
    }
    Ok(gt)
}

// ---------------------------------------------------------------- reports

pub fn write_report(r: &EvalReport) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    writeln!(out, "pdq {}", real(r.pdq)).unwrap();
    writeln!(out, "avg_label_q {}", real(r.avg_label_q)).unwrap();
    writeln!(out, "avg_spatial_q {}", real(r.avg_spatial_q)).unwrap();
    out.push_str("quality_average true_positives\n");
    writeln!(out, "tp {}\nfp {}\nfn {}", r.n_tp, r.n_fp, r.n_fn).unwrap();
    match r.map {
        Some(m) => writeln!(out, "map {} iou={}", real(m.value), real(m.iou_threshold)).unwrap(),
        None => out.push_str("map none\n"),
    }
    for f in &r.frames {
        writeln!(
            out,
            "frame {} {} {} {} {}",
            f.frame_id,
            f.n_tp,
            f.n_fp,
            f.n_fn,
            f.matches.len()
        )
        .unwrap();
        for m in &f.matches {
            let q = &m.quality;
            write!(out, "match {} {}", m.gt_index, m.det_index).unwrap();
            push_reals(&mut out, [q.ppdq, q.label_q, q.spatial_q, q.fg_loss, q.bg_loss]);
            out.push('\n');
        }
    }
    out
}

pub fn read_report(text: &str) -> Result<EvalReport> {
    let mut lines = Lines::new(text);
    let (n, toks) = lines.expect("header")?;
    if toks.join(" ") != REPORT_HEADER {
        return Err(IoError::at(n, format!("expected header `{REPORT_HEADER}`")));
    }
    let mut scalar = |key: &str| -> Result<(usize, Vec<&str>)> {
        let (n, toks) = lines.expect_tag(key)?;
        Ok((n, toks))
    };
    let mut real_field = |key: &str| -> Result<f64> {
        let (n, toks) = scalar(key)?;
        arity(n, &toks, 2, key)?;
        Ok(parse_reals(n, &toks[1..2])?[0])
    };
    let pdq = real_field("pdq")?;
    let avg_label_q = real_field("avg_label_q")?;
    let avg_spatial_q = real_field("avg_spatial_q")?;
    let (n, toks) = lines.expect_tag("quality_average")?;
    if toks.get(1) != Some(&"true_positives") {
        return Err(IoError::at(n, "unsupported quality_average"));
    }
    let mut count = |key: &str| -> Result<usize> {
        let (n, toks) = lines.expect_tag(key)?;
        arity(n, &toks, 2, key)?;
        parse(n, "count", toks[1])
    };
    let (n_tp, n_fp, n_fn) = (count("tp")?, count("fp")?, count("fn")?);
    let (n, toks) = lines.expect_tag("map")?;
    let map = match toks.as_slice() {
        [_, "none"] => None,
        [_, v, thr] => {
            let thr = thr
                .strip_prefix("iou=")
                .ok_or_else(|| IoError::at(n, "expected `iou=<threshold>`"))?;
            let v = parse_reals(n, &[v, thr])?;
            Some(MapScore {
                value: v[0],
                iou_threshold: v[1],
            })
        }
        _ => return Err(IoError::at(n, "expected `map <value> iou=<threshold>` or `map none`")),
    };
    let mut frames = Vec::new();
    while let Some((n, toks)) = lines.next() {
        if toks[0] != "frame" {
            return Err(IoError::at(n, format!("expected `frame`, found `{}`", toks[0])));
        }
        arity(n, &toks, 6, "frame")?;
        let mut tally = FrameTally::empty(toks[1]);
        tally.n_tp = parse(n, "count", toks[2])?;
        tally.n_fp = parse(n, "count", toks[3])?;
        tally.n_fn = parse(n, "count", toks[4])?;
        let n_matches: usize = parse(n, "count", toks[5])?;
        for _ in 0..n_matches {
            let (n, toks) = lines.expect_tag("match")?;
            arity(n, &toks, 8, "match")?;
            let v = parse_reals(n, &toks[3..])?;
            tally.matches.push(TruePositive {
                gt_index: parse(n, "index", toks[1])?,
                det_index: parse(n, "index", toks[2])?,
                quality: PairQuality {
                    ppdq: v[0],
                    label_q: v[1],
                    spatial_q: v[2],
                    fg_loss: v[3],
                    bg_loss: v[4],
                },
            });
        }
        frames.push(tally);
    }
    Ok(EvalReport {
        pdq,
        avg_label_q,
        avg_spatial_q,
        n_tp,
        n_fp,
        n_fn,
        map,
        frames,
    })
}

/// Table-style summary in percent with two decimals.
pub fn report_summary(r: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "PDQ  {:>6.2}", 100.0 * r.pdq).unwrap();
    if let Some(m) = r.map {
        writeln!(out, "mAP  {:>6.2}  (IoU {})", 100.0 * m.value, m.iou_threshold).unwrap();
    }
    writeln!(out, "Lbl  {:>6.2}", 100.0 * r.avg_label_q).unwrap();
    writeln!(out, "Sp   {:>6.2}", 100.0 * r.avg_spatial_q).unwrap();
    write!(out, "TP {}  FP {}  FN {}", r.n_tp, r.n_fp, r.n_fn).unwrap();
    out
}

// ---------------------------------------------------------------- rPC grids

/// Reads `corruption,severity,<metric>...` with one `clean,0,...` row.
pub fn read_grid_csv(text: &str) -> Result<Vec<PerformanceGrid>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "corruption" || &headers[1] != "severity" {
        return Err(IoError::at(1, "header must be `corruption,severity,<metric>,...`"));
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    let mut clean: Option<Vec<f64>> = None;
    let mut cells: Vec<(String, u32, Vec<f64>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(IoError::at(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let values = parse_reals(line, &rec.iter().skip(2).collect::<Vec<_>>())?;
        if &rec[0] == "clean" {
            if clean.replace(values).is_some() {
                return Err(IoError::at(line, "second `clean` row"));
            }
            continue;
        }
        let severity: u32 = parse(line, "severity", &rec[1])?;
        if !seen.insert((rec[0].to_owned(), severity)) {
            return Err(IoError::at(line, format!("duplicate cell {}/{severity}", &rec[0])));
        }
        cells.push((rec[0].to_owned(), severity, values));
    }
    if cells.is_empty() {
        return Err(IoError::Format("grid has no corruption rows".into()));
    }
    let clean = clean.ok_or_else(|| IoError::Format("grid has no `clean,0,...` row".into()))?;
    Ok(names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut g = PerformanceGrid::new(name.clone(), clean[i]);
            for (c, s, v) in &cells {
                g.insert(c.clone(), *s, v[i]);
            }
            g
        })
        .collect())
}

/// Writes metric values of per-cell reports as a grid CSV.
pub fn write_grid_csv(reports: &BTreeMap<(String, u32), EvalReport>, clean: &EvalReport) -> Result<String> {
    let metrics = crate::robustness::report_metrics(clean);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["corruption".to_owned(), "severity".to_owned()];
    header.extend(metrics.iter().map(|(m, _)| m.name().to_owned()));
    w.write_record(&header)?;
    let row = |c: &str, s: u32, values: Vec<(Metric, f64)>| {
        let mut r = vec![c.to_owned(), s.to_string()];
        r.extend(values.into_iter().map(|(_, v)| real(v)));
        r
    };
    w.write_record(row("clean", 0, metrics.clone()))?;
    for ((c, s), r) in reports {
        w.write_record(row(c, *s, crate::robustness::report_metrics(r)))?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// rPC table: `metric,rpc_percent,note`, with the note set when undefined.
pub fn write_rpc_csv(rows: &[(String, std::result::Result<f64, String>)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "rpc_percent", "note"])?;
    for (name, r) in rows {
        match r {
            Ok(v) => w.write_record([name.as_str(), &format!("{:.2}", 100.0 * v), ""])?,
            Err(e) => w.write_record([name.as_str(), "", e.as_str()])?,
        }
    }
    let bytes = w.into_inner().map_err(|e| IoError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// File name of the report for one grid cell: `<corruption>_s<severity>.report`.
pub fn cell_report_name(corruption: &str, severity: u32) -> String {
    format!("{corruption}_s{severity}.report")
}

pub fn parse_cell_report_name(name: &str) -> Option<(String, u32)> {
    let stem = name.strip_suffix(".report")?;
    let (c, s) = stem.rsplit_once("_s")?;
    if c.is_empty() {
        return None;
    }
    Some((c.to_owned(), s.parse().ok()?))
}

// ---------------------------------------------------------------- configs

/// Parses a TOML config; unknown or mistyped keys are reported by name.
pub fn parse_toml<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| IoError::Config {
        path: path.to_owned(),
        message: e.to_string().trim_end().to_owned(),
    })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_toml(path, &read_file(path)?)
}
