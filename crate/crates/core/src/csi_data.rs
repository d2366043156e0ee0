//! CSI records, session files, label tracks and fixed-length windowing.
//!
//! Session file layout (line oriented, UTF-8):
//!
//! ```text
//! CSIS v1 P=<int> S=<int> rate=<float>
//! t=<float> p=<int> <re>,<im> <re>,<im> ...   (exactly S pairs)
//! ```
//!
//! Label track files carry one interval per line: `<start> <end> <normal|apnea|plmd>`.
//! Blank lines and lines starting with `#` are ignored in both formats.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{self, UniformSeries};

const HEADER_MAGIC: &str = "CSIS";
const HEADER_VERSION: &str = "v1";

/// Ground-truth sleep event class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SleepClass {
    Normal = 0,
    Apnea = 1,
    Plmd = 2,
}

impl SleepClass {
    pub const ALL: [SleepClass; 3] = [SleepClass::Normal, SleepClass::Apnea, SleepClass::Plmd];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepClass::Normal => "normal",
            SleepClass::Apnea => "apnea",
            SleepClass::Plmd => "plmd",
        }
    }

    /// Tie-break rank used when two classes cover a window equally.
    fn severity(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for SleepClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SleepClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(SleepClass::Normal),
            "apnea" => Ok(SleepClass::Apnea),
            "plmd" => Ok(SleepClass::Plmd),
            other => Err(Error::Format(format!("unknown class `{other}`"))),
        }
    }
}

/// One CSI snapshot: all subcarriers of one antenna pair at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecord {
    pub timestamp: f64,
    pub pair: usize,
    pub values: Vec<Complex64>,
}

/// A labeled span of a session, `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelInterval {
    pub start: f64,
    pub end: f64,
    pub class: SleepClass,
}

impl LabelInterval {
    pub fn new(start: f64, end: f64, class: SleepClass) -> Self {
        Self { start, end, class }
    }

    fn overlap(&self, start: f64, end: f64) -> f64 {
        (self.end.min(end) - self.start.max(start)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMeta {
    pub pairs: usize,
    pub subcarriers: usize,
    pub nominal_rate: f64,
    pub label_track: Vec<LabelInterval>,
}

impl SessionMeta {
    pub fn new(pairs: usize, subcarriers: usize, nominal_rate: f64) -> Self {
        Self { pairs, subcarriers, nominal_rate, label_track: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.subcarriers == 0 {
            return Err(Error::Format("P and S must be positive".into()));
        }
        if !(self.nominal_rate.is_finite() && self.nominal_rate > 0.0) {
            return Err(Error::Format(format!("invalid rate {}", self.nominal_rate)));
        }
        validate_label_track(&self.label_track)
    }

    /// Class covering the largest part of `[start, end)`, ties going to the
    /// more severe class. `None` when no label interval overlaps the span.
    pub fn majority_label(&self, start: f64, end: f64) -> Option<SleepClass> {
        let mut cover = [0.0f64; 3];
        for iv in &self.label_track {
            cover[iv.class.index()] += iv.overlap(start, end);
        }
        let mut best: Option<(SleepClass, f64)> = None;
        for class in SleepClass::ALL {
            let c = cover[class.index()];
            if c <= 1e-9 {
                continue;
            }
            best = match best {
                Some((b, bc)) if bc > c + 1e-9 => Some((b, bc)),
                Some((b, bc)) if (bc - c).abs() <= 1e-9 && b.severity() > class.severity() => Some((b, bc)),
                _ => Some((class, c)),
            };
        }
        best.map(|(c, _)| c)
    }
}

fn validate_label_track(track: &[LabelInterval]) -> Result<()> {
    for (i, iv) in track.iter().enumerate() {
        if !(iv.start.is_finite() && iv.end.is_finite()) || iv.end <= iv.start || iv.start < 0.0 {
            return Err(Error::Format(format!("label interval {i} is invalid: [{}, {})", iv.start, iv.end)));
        }
        if i > 0 && track[i - 1].end > iv.start + 1e-12 {
            return Err(Error::Format(format!("label interval {i} overlaps or is out of order")));
        }
    }
    Ok(())
}

/// A parsed session: header metadata plus all records.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub meta: SessionMeta,
    pub records: Vec<CsiRecord>,
}

impl Session {
    pub fn pair_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.meta.pairs];
        for r in &self.records {
            counts[r.pair] += 1;
        }
        counts
    }

    /// Records of one antenna pair, sorted by timestamp.
    pub fn pair_stream(&self, pair: usize) -> Vec<&CsiRecord> {
        let mut out: Vec<&CsiRecord> = self.records.iter().filter(|r| r.pair == pair).collect();
        out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        out
    }
}

/// Dense `[time × pair × subcarrier]` block of resampled CSI with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiWindow {
    pub start: f64,
    pub rate: f64,
    pub time_steps: usize,
    pub pairs: usize,
    pub subcarriers: usize,
    /// Row-major `[time][pair][subcarrier]`.
    pub samples: Vec<Complex64>,
    pub label: SleepClass,
}

impl CsiWindow {
    pub fn at(&self, t: usize, pair: usize, sub: usize) -> Complex64 {
        self.samples[(t * self.pairs + pair) * self.subcarriers + sub]
    }

    /// Amplitude matrix `[time][subcarrier]` of one antenna pair.
    pub fn pair_amplitudes(&self, pair: usize) -> Vec<Vec<f64>> {
        (0..self.time_steps)
            .map(|t| {
                let base = (t * self.pairs + pair) * self.subcarriers;
                self.samples[base..base + self.subcarriers].iter().map(|c| c.norm()).collect()
            })
            .collect()
    }
}

fn parse_float(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what} `{tok}`") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite {what}") });
    }
    Ok(v)
}

fn parse_key<'a>(tok: &'a str, key: &str, line: usize) -> Result<&'a str> {
    tok.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| Error::Parse { line, msg: format!("expected `{key}=...`, found `{tok}`") })
}

fn parse_header(line: &str) -> Result<SessionMeta> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != HEADER_MAGIC || toks[1] != HEADER_VERSION {
        return Err(Error::Parse { line: 1, msg: format!("expected `{HEADER_MAGIC} {HEADER_VERSION} P=.. S=.. rate=..` header") });
    }
    let pairs: usize = parse_key(toks[2], "P", 1)?
        .parse()
        .map_err(|_| Error::Parse { line: 1, msg: "bad P".into() })?;
    let subcarriers: usize = parse_key(toks[3], "S", 1)?
        .parse()
        .map_err(|_| Error::Parse { line: 1, msg: "bad S".into() })?;
    let rate = parse_float(parse_key(toks[4], "rate", 1)?, 1, "rate")?;
    let meta = SessionMeta::new(pairs, subcarriers, rate);
    meta.validate()?;
    Ok(meta)
}

fn parse_record(line: &str, lineno: usize, meta: &SessionMeta) -> Result<CsiRecord> {
    let mut toks = line.split_whitespace();
    let t_tok = toks.next().ok_or_else(|| Error::Parse { line: lineno, msg: "empty record".into() })?;
    let timestamp = parse_float(parse_key(t_tok, "t", lineno)?, lineno, "timestamp")?;
    if timestamp < 0.0 {
        return Err(Error::Parse { line: lineno, msg: "negative timestamp".into() });
    }
    let p_tok = toks.next().ok_or_else(|| Error::Parse { line: lineno, msg: "missing pair index".into() })?;
    let pair: usize = parse_key(p_tok, "p", lineno)?
        .parse()
        .map_err(|_| Error::Parse { line: lineno, msg: format!("bad pair index `{p_tok}`") })?;
    if pair >= meta.pairs {
        return Err(Error::Format(format!("line {lineno}: pair {pair} out of range (P={})", meta.pairs)));
    }
    let mut values = Vec::with_capacity(meta.subcarriers);
    for tok in toks {
        let (re, im) = tok
            .split_once(',')
            .ok_or_else(|| Error::Parse { line: lineno, msg: format!("expected `re,im`, found `{tok}`") })?;
        values.push(Complex64::new(parse_float(re, lineno, "real part")?, parse_float(im, lineno, "imaginary part")?));
    }
    if values.len() != meta.subcarriers {
        return Err(Error::Format(format!(
            "line {lineno}: expected S={} complex values, found {}",
            meta.subcarriers,
            values.len()
        )));
    }
    Ok(CsiRecord { timestamp, pair, values })
}

/// Parses a session file. Records come back sorted by `(timestamp, pair)`.
pub fn parse_session(text: &str) -> Result<Session> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let meta = loop {
        match lines.next() {
            None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
            Some((_, l)) if l.is_empty() || l.starts_with('#') => continue,
            Some((_, l)) => break parse_header(l)?,
        }
    };
    let mut records = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        records.push(parse_record(line, lineno, &meta)?);
    }
    canonicalize(&mut records);
    log::debug!("parsed session: {} records over {} pairs", records.len(), meta.pairs);
    Ok(Session { meta, records })
}

/// Sorts records into canonical `(timestamp, pair)` order.
pub fn canonicalize(records: &mut [CsiRecord]) {
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.pair.cmp(&b.pair)));
}

/// Writes the canonical text form of a session (records re-sorted).
pub fn serialize_session(meta: &SessionMeta, records: &[CsiRecord]) -> String {
    let mut sorted: Vec<&CsiRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.pair.cmp(&b.pair)));
    let mut out = String::with_capacity(64 + records.len() * meta.subcarriers * 24);
    let _ = writeln!(out, "{HEADER_MAGIC} {HEADER_VERSION} P={} S={} rate={}", meta.pairs, meta.subcarriers, meta.nominal_rate);
    for r in sorted {
        let _ = write!(out, "t={} p={}", r.timestamp, r.pair);
        for v in &r.values {
            let _ = write!(out, " {},{}", v.re, v.im);
        }
        out.push('\n');
    }
    out
}

pub fn parse_label_track(text: &str) -> Result<Vec<LabelInterval>> {
    let mut track = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Parse { line: lineno, msg: "expected `<start> <end> <class>`".into() });
        }
        let start = parse_float(toks[0], lineno, "start")?;
        let end = parse_float(toks[1], lineno, "end")?;
        let class = toks[2].parse().map_err(|_| Error::Parse { line: lineno, msg: format!("unknown class `{}`", toks[2]) })?;
        track.push(LabelInterval::new(start, end, class));
    }
    track.sort_by(|a, b| a.start.total_cmp(&b.start));
    validate_label_track(&track)?;
    Ok(track)
}

pub fn serialize_label_track(track: &[LabelInterval]) -> String {
    let mut out = String::new();
    for iv in track {
        let _ = writeln!(out, "{} {} {}", iv.start, iv.end, iv.class);
    }
    out
}

/// Window geometry in seconds plus the uniform rate the streams are resampled to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_sec: f64,
    pub hop_sec: f64,
    pub rate: f64,
}

impl WindowSpec {
    pub fn samples_per_window(&self) -> Result<usize> {
        let n = self.window_sec * self.rate;
        if !(n.is_finite() && n >= 1.0) || (n - n.round()).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "window {} s × rate {} Hz is not a whole number of samples",
                self.window_sec, self.rate
            )));
        }
        Ok(n.round() as usize)
    }
}

/// Cuts a session into labeled windows.
///
/// Each pair's stream is sorted and resampled to `spec.rate`; windows start at
/// multiples of `spec.hop_sec` and must lie fully inside the span shared by
/// all pairs. Windows without any label coverage are dropped.
pub fn windowize(records: &[CsiRecord], meta: &SessionMeta, spec: &WindowSpec) -> Result<Vec<CsiWindow>> {
    meta.validate()?;
    let len = spec.samples_per_window()?;
    if !(spec.hop_sec.is_finite() && spec.hop_sec > 0.0) {
        return Err(Error::InvalidParam(format!("hop must be positive, got {}", spec.hop_sec)));
    }
    let mut streams: Vec<Vec<&CsiRecord>> = vec![Vec::new(); meta.pairs];
    for r in records {
        if r.pair >= meta.pairs {
            return Err(Error::Format(format!("record pair {} out of range (P={})", r.pair, meta.pairs)));
        }
        if r.values.len() != meta.subcarriers {
            return Err(Error::Format(format!("record has {} values, expected S={}", r.values.len(), meta.subcarriers)));
        }
        streams[r.pair].push(r);
    }
    if streams.iter().any(|s| s.len() < 2) {
        return Ok(Vec::new());
    }
    let resampled: Vec<UniformSeries> = streams
        .into_iter()
        .map(|s| preprocess::resample(&s, spec.rate))
        .collect::<Result<_>>()?;

    let first = resampled.iter().map(|s| s.start_index).max().unwrap_or(0);
    let last = resampled.iter().map(|s| s.start_index + s.len() as i64).min().unwrap_or(0);

    let mut windows = Vec::new();
    let first_time = first as f64 / spec.rate;
    let mut n = (first_time / spec.hop_sec - 1e-9).ceil() as i64;
    loop {
        let start_time = n as f64 * spec.hop_sec;
        let start_idx = (start_time * spec.rate).round() as i64;
        if start_idx + len as i64 > last {
            break;
        }
        n += 1;
        if start_idx < first {
            continue;
        }
        let Some(label) = meta.majority_label(start_time, start_time + spec.window_sec) else {
            continue;
        };
        let mut samples = Vec::with_capacity(len * meta.pairs * meta.subcarriers);
        for t in 0..len {
            for s in &resampled {
                let row = (start_idx - s.start_index) as usize + t;
                samples.extend_from_slice(&s.values[row]);
            }
        }
        windows.push(CsiWindow {
            start: start_time,
            rate: spec.rate,
            time_steps: len,
            pairs: meta.pairs,
            subcarriers: meta.subcarriers,
            samples,
            label,
        });
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform_session(pairs: usize, subs: usize, rate: f64, secs: f64, track: Vec<LabelInterval>) -> Session {
        let n = (secs * rate).round() as usize;
        let mut records = Vec::new();
        for k in 0..n {
            for p in 0..pairs {
                let values = (0..subs).map(|s| Complex64::new(k as f64 + s as f64, p as f64)).collect();
                records.push(CsiRecord { timestamp: k as f64 / rate, pair: p, values });
            }
        }
        let mut meta = SessionMeta::new(pairs, subs, rate);
        meta.label_track = track;
        Session { meta, records }
    }

    #[test]
    fn parses_two_records() {
        let text = "CSIS v1 P=2 S=2 rate=10\nt=0 p=0 1,2 3,4\nt=0.1 p=1 -1,0.5 0,0\n";
        let s = parse_session(text).unwrap();
        assert_eq!(s.meta.pairs, 2);
        assert_eq!(s.meta.subcarriers, 2);
        assert_eq!(s.records.len(), 2);
        assert_eq!(s.records[0].values, vec![Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]);
        assert_eq!(s.records[1].pair, 1);
        assert_eq!(s.records[1].timestamp, 0.1);
        assert_eq!(s.pair_counts(), vec![1, 1]);
    }

    #[test]
    fn arity_mismatch_is_format_error() {
        let text = "CSIS v1 P=1 S=3 rate=10\nt=0 p=0 1,2 3,4\n";
        assert!(matches!(parse_session(text), Err(Error::Format(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "CSIS v1 P=1 S=1 rate=10\nt=0 p=0 1,2\nt=0.1 p=0 1;2\n";
        match parse_session(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_header_rejected() {
        assert!(parse_session("CSIS v2 P=1 S=1 rate=10\n").is_err());
        assert!(parse_session("").is_err());
    }

    #[test]
    fn label_track_roundtrip_and_validation() {
        let track = vec![LabelInterval::new(0.0, 12.5, SleepClass::Apnea), LabelInterval::new(12.5, 20.0, SleepClass::Normal)];
        let text = serialize_label_track(&track);
        assert_eq!(parse_label_track(&text).unwrap(), track);
        assert!(parse_label_track("0 10 apnea\n5 12 normal\n").is_err());
        assert!(parse_label_track("0 10 snoring\n").is_err());
    }

    #[test]
    fn window_counts() {
        let track = vec![LabelInterval::new(0.0, 60.0, SleepClass::Normal)];
        let s = uniform_session(1, 2, 10.0, 60.0, track);
        let spec = WindowSpec { window_sec: 20.0, hop_sec: 20.0, rate: 10.0 };
        assert_eq!(windowize(&s.records, &s.meta, &spec).unwrap().len(), 3);
        let spec = WindowSpec { hop_sec: 10.0, ..spec };
        let ws = windowize(&s.records, &s.meta, &spec).unwrap();
        assert_eq!(ws.len(), 5);
        assert_eq!(ws.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0.0, 10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn short_stream_gives_no_windows() {
        let track = vec![LabelInterval::new(0.0, 60.0, SleepClass::Normal)];
        let s = uniform_session(1, 2, 10.0, 15.0, track);
        let spec = WindowSpec { window_sec: 20.0, hop_sec: 20.0, rate: 10.0 };
        assert!(windowize(&s.records, &s.meta, &spec).unwrap().is_empty());
    }

    #[test]
    fn majority_label_and_ties() {
        let track = vec![LabelInterval::new(0.0, 12.0, SleepClass::Apnea), LabelInterval::new(12.0, 20.0, SleepClass::Normal)];
        let s = uniform_session(1, 1, 10.0, 20.0, track);
        let spec = WindowSpec { window_sec: 20.0, hop_sec: 20.0, rate: 10.0 };
        let ws = windowize(&s.records, &s.meta, &spec).unwrap();
        assert_eq!(ws[0].label, SleepClass::Apnea);

        let mut meta = s.meta.clone();
        meta.label_track = vec![LabelInterval::new(0.0, 10.0, SleepClass::Plmd), LabelInterval::new(10.0, 20.0, SleepClass::Apnea)];
        assert_eq!(meta.majority_label(0.0, 20.0), Some(SleepClass::Plmd));
        meta.label_track = vec![LabelInterval::new(0.0, 10.0, SleepClass::Normal), LabelInterval::new(10.0, 20.0, SleepClass::Apnea)];
        assert_eq!(meta.majority_label(0.0, 20.0), Some(SleepClass::Apnea));
        assert_eq!(meta.majority_label(30.0, 50.0), None);
    }

    #[test]
    fn unlabeled_windows_dropped() {
        let track = vec![LabelInterval::new(25.0, 60.0, SleepClass::Normal)];
        let s = uniform_session(1, 1, 10.0, 60.0, track);
        let spec = WindowSpec { window_sec: 20.0, hop_sec: 20.0, rate: 10.0 };
        let ws = windowize(&s.records, &s.meta, &spec).unwrap();
        assert_eq!(ws.iter().map(|w| w.start).collect::<Vec<_>>(), vec![20.0, 40.0]);
    }

    fn arb_session() -> impl Strategy<Value = (Session, u64)> {
        (1usize..4, 1usize..5, 30usize..80, any::<u64>()).prop_map(|(pairs, subs, n, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut records = Vec::new();
            for k in 0..n {
                for p in 0..pairs {
                    let values = (0..subs).map(|_| Complex64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
                    let jitter: f64 = rng.random_range(-0.03..0.03);
                    records.push(CsiRecord { timestamp: (k as f64 * 0.1 + jitter).max(0.0), pair: p, values });
                }
            }
            let mut meta = SessionMeta::new(pairs, subs, 10.0);
            meta.label_track = vec![LabelInterval::new(0.0, n as f64 * 0.1, SleepClass::Normal)];
            (Session { meta, records }, seed)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn serialize_parse_is_identity((s, _) in arb_session()) {
            let text = serialize_session(&s.meta, &s.records);
            let parsed = parse_session(&text).unwrap();
            let mut canon = s.records.clone();
            canonicalize(&mut canon);
            prop_assert_eq!(&parsed.records, &canon);
            prop_assert_eq!(serialize_session(&parsed.meta, &parsed.records), text);
        }

        #[test]
        fn windows_dense_and_order_independent((s, seed) in arb_session()) {
            let spec = WindowSpec { window_sec: 2.0, hop_sec: 1.0, rate: 10.0 };
            let ws = windowize(&s.records, &s.meta, &spec).unwrap();
            for w in &ws {
                prop_assert_eq!(w.time_steps, 20);
                prop_assert_eq!(w.samples.len(), 20 * s.meta.pairs * s.meta.subcarriers);
            }
            let mut shuffled = s.records.clone();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5));
            prop_assert_eq!(windowize(&shuffled, &s.meta, &spec).unwrap(), ws);
        }
    }
}
