//! `.tns` and K-tensor text files, slice streaming and synthetic generators.
//!
//! A `.tns` file holds one entry per line: `d` 1-based indices followed by
//! the value. Lines starting with `#` are comments, except that a first line
//! of the form `# dims: I1 I2 ... Id` fixes the dimensions. Without it the
//! dimensions are the per-mode maximum index.
//!
//! A K-tensor file holds `d R` on the first line, the dims on the second,
//! the weights on the third, then the rows of each factor matrix in turn.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{GcpError, Result};
use crate::rng::{Phase, RngStreams};
use crate::tensor::{model_value, CooEntries, KTensor, Linearizer, SparseTensor};

/// Parsing switches for `.tns` input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TnsOptions {
    /// Sum repeated coordinates instead of failing.
    pub merge_duplicates: bool,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GcpError {
    GcpError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_dims_header(rest: &str, path: &Path, line: usize) -> Result<Vec<usize>> {
    let dims: Vec<usize> = rest
        .split_whitespace()
        .map(|tok| match tok.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(parse_err(path, line, format!("bad dimension '{tok}' in header"))),
        })
        .collect::<Result<_>>()?;
    if dims.is_empty() {
        return Err(parse_err(path, line, "dims header lists no dimensions"));
    }
    Ok(dims)
}

/// Parse `.tns` text. `path` only labels error messages.
///
/// Explicit zeros are dropped. With `merge_duplicates` a merged sum of
/// exactly zero is dropped as well.
pub fn parse_tns<R: BufRead>(reader: R, path: &Path, opts: TnsOptions) -> Result<SparseTensor> {
    let mut header: Option<Vec<usize>> = None;
    let mut arity: Option<usize> = None;
    let mut coords: Vec<usize> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut seen: HashMap<Vec<usize>, (usize, usize)> = HashMap::new();
    let mut first_content = true;
    let mut buf = Vec::new();

    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(comment) = text.strip_prefix('#') {
            if first_content {
                if let Some(rest) = comment.trim_start().strip_prefix("dims:") {
                    let dims = parse_dims_header(rest, path, lineno)?;
                    arity = Some(dims.len());
                    header = Some(dims);
                }
            }
            first_content = false;
            continue;
        }
        first_content = false;

        let toks: Vec<&str> = text.split_whitespace().collect();
        let d = *arity.get_or_insert(toks.len().saturating_sub(1));
        if d == 0 || toks.len() != d + 1 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} indices and a value, found {} fields", d.max(1), toks.len()),
            ));
        }
        buf.clear();
        for tok in &toks[..d] {
            let i: i64 = tok
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("non-integer index '{tok}'")))?;
            if i < 1 {
                return Err(parse_err(path, lineno, format!("index {i} is not 1-based")));
            }
            buf.push((i - 1) as usize);
        }
        if let Some(dims) = &header {
            if let Some((k, (&i, &n))) = buf.iter().zip(dims).enumerate().find(|(_, (&i, &n))| i >= n) {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("index {} exceeds declared dim {n} of mode {}", i + 1, k + 1),
                ));
            }
        }
        let v: f64 = toks[d]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("non-numeric value '{}'", toks[d])))?;
        if !v.is_finite() {
            return Err(parse_err(path, lineno, format!("non-finite value '{}'", toks[d])));
        }
        match seen.get(&buf) {
            Some(&(e, first)) => {
                if !opts.merge_duplicates {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("duplicate coordinate (first seen on line {first})"),
                    ));
                }
                values[e] += v;
            }
            None => {
                seen.insert(buf.clone(), (values.len(), lineno));
                coords.extend_from_slice(&buf);
                values.push(v);
            }
        }
    }

    let Some(d) = arity else {
        return Err(parse_err(path, 0, "no entries and no dims header"));
    };
    let dims = match header {
        Some(h) => h,
        None => {
            let mut dims = vec![0usize; d];
            for c in coords.chunks_exact(d) {
                for (m, &i) in dims.iter_mut().zip(c) {
                    *m = (*m).max(i + 1);
                }
            }
            dims
        }
    };
    let (mut kept_coords, mut kept_values) = (Vec::with_capacity(coords.len()), Vec::with_capacity(values.len()));
    for (c, &v) in coords.chunks_exact(d).zip(&values) {
        if v != 0.0 {
            kept_coords.extend_from_slice(c);
            kept_values.push(v);
        }
    }
    SparseTensor::from_flat(&dims, kept_coords, kept_values)
}

pub fn read_tns(path: impl AsRef<Path>, opts: TnsOptions) -> Result<SparseTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(with_path(path))?;
    parse_tns(BufReader::new(file), path, opts)
}

/// `.tns` text with a dims header; values carry 17 significant digits.
pub fn format_tns(x: &SparseTensor) -> String {
    let mut out = String::new();
    let dims: Vec<String> = x.dims().iter().map(|n| n.to_string()).collect();
    let _ = writeln!(out, "# dims: {}", dims.join(" "));
    for (c, v) in x.iter() {
        for &i in c {
            let _ = write!(out, "{} ", i + 1);
        }
        let _ = writeln!(out, "{v:.16e}");
    }
    out
}

pub fn write_tns(x: &SparseTensor, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_tns(x))
}

/// Attach the path to an I/O error.
pub(crate) fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> GcpError + '_ {
    move |e| GcpError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(with_path(path))?);
    w.write_all(text.as_bytes()).map_err(with_path(path))?;
    w.flush().map_err(with_path(path))?;
    Ok(())
}

fn join_floats<'a>(vals: impl Iterator<Item = &'a f64>) -> String {
    vals.map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" ")
}

pub fn format_ktensor(m: &KTensor) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.ndims(), m.rank());
    let dims: Vec<String> = m.dims().iter().map(|n| n.to_string()).collect();
    let _ = writeln!(out, "{}", dims.join(" "));
    let _ = writeln!(out, "{}", join_floats(m.weights.iter()));
    for a in &m.factors {
        for row in a.rows() {
            let _ = writeln!(out, "{}", join_floats(row.iter()));
        }
    }
    out
}

pub fn write_ktensor(m: &KTensor, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_ktensor(m))
}

pub fn parse_ktensor(text: &str, path: &Path) -> Result<KTensor> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| parse_err(path, 0, format!("file ends before {what}")))
    };
    let ints = |(n, l): (usize, &str)| -> Result<Vec<usize>> {
        l.split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| parse_err(path, n, format!("bad integer '{t}'"))))
            .collect()
    };
    let floats = |(n, l): (usize, &str), len: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, n, format!("bad number '{t}'"))))
            .collect::<Result<_>>()?;
        if v.len() != len {
            return Err(parse_err(path, n, format!("expected {len} numbers, found {}", v.len())));
        }
        Ok(v)
    };
    let head = next("the header")?;
    let hv = ints(head)?;
    let [d, r] = hv[..] else {
        return Err(parse_err(path, head.0, "header must be 'd R'"));
    };
    let dl = next("the dims line")?;
    let dims = ints(dl)?;
    if dims.len() != d {
        return Err(parse_err(path, dl.0, format!("expected {d} dims, found {}", dims.len())));
    }
    let weights = Array1::from(floats(next("the weights")?, r)?);
    let mut factors = Vec::with_capacity(d);
    for &n in &dims {
        let mut a = Array2::zeros((n, r));
        for i in 0..n {
            let row = floats(next("the factor rows")?, r)?;
            a.row_mut(i).assign(&Array1::from(row));
        }
        factors.push(a);
    }
    if let Some((n, _)) = lines.next() {
        return Err(parse_err(path, n + 1, "trailing content after the last factor row"));
    }
    KTensor::new(weights, factors)
}

pub fn read_ktensor(path: impl AsRef<Path>) -> Result<KTensor> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(with_path(path))?;
    parse_ktensor(&text, path)
}

/// Iterator over the last-mode slices of a tensor, in order.
pub struct SliceStream<'a> {
    x: &'a SparseTensor,
    /// Entry ids grouped by last index.
    order: Vec<usize>,
    starts: Vec<usize>,
    next: usize,
}

impl Iterator for SliceStream<'_> {
    type Item = SparseTensor;

    fn next(&mut self) -> Option<SparseTensor> {
        if self.next + 1 >= self.starts.len() {
            return None;
        }
        let t = self.next;
        self.next += 1;
        let d = self.x.ndims();
        let ids = &self.order[self.starts[t]..self.starts[t + 1]];
        let mut coords = Vec::with_capacity(ids.len() * (d - 1));
        let mut values = Vec::with_capacity(ids.len());
        for &e in ids {
            coords.extend_from_slice(&self.x.coord(e)[..d - 1]);
            values.push(self.x.value(e));
        }
        Some(SparseTensor::from_flat(&self.x.dims()[..d - 1], coords, values).expect("slice of a valid tensor"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.starts.len() - 1 - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SliceStream<'_> {}

/// Slices over the last mode; needs at least two modes.
pub fn stream_slices(x: &SparseTensor) -> Result<SliceStream<'_>> {
    let d = x.ndims();
    if d < 2 {
        return Err(GcpError::Shape("streaming needs at least two modes".into()));
    }
    let n = x.dims()[d - 1];
    let mut starts = vec![0usize; n + 1];
    for e in 0..x.len() {
        starts[x.coord(e)[d - 1] + 1] += 1;
    }
    for t in 0..n {
        starts[t + 1] += starts[t];
    }
    let mut fill = starts.clone();
    let mut order = vec![0usize; x.len()];
    for e in 0..x.len() {
        let t = x.coord(e)[d - 1];
        order[fill[t]] = e;
        fill[t] += 1;
    }
    Ok(SliceStream {
        x,
        order,
        starts,
        next: 0,
    })
}

pub const DEFAULT_MAX_ENTRIES: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Gaussian,
    Poisson,
}

/// Parameters of a planted-model data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub dims: Vec<usize>,
    pub rank: usize,
    /// Noise standard deviation (gaussian).
    pub noise: f64,
    /// Target fraction of nonzero cells (poisson).
    pub fraction: f64,
    pub seed: u64,
    /// Refuse dense outputs larger than this many cells.
    pub max_entries: u64,
}

impl SyntheticSpec {
    pub fn gaussian(dims: &[usize], rank: usize, noise: f64, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::Gaussian,
            dims: dims.to_vec(),
            rank,
            noise,
            fraction: 1.0,
            seed,
            max_entries: DEFAULT_MAX_ENTRIES,
        }
    }

    pub fn poisson(dims: &[usize], rank: usize, fraction: f64, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::Poisson,
            dims: dims.to_vec(),
            rank,
            noise: 0.0,
            fraction,
            seed,
            max_entries: DEFAULT_MAX_ENTRIES,
        }
    }

    fn validate(&self) -> Result<Linearizer> {
        let bad = |m: String| Err(GcpError::Precondition(m));
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and nonnegative, got {}", self.noise));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("nonzero fraction must lie in (0, 1], got {}", self.fraction));
        }
        Linearizer::new(&self.dims)
    }
}

/// A generated tensor and the model it was drawn from.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub tensor: SparseTensor,
    pub truth: KTensor,
}

pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    match spec.kind {
        SyntheticKind::Gaussian => gen_gaussian(spec),
        SyntheticKind::Poisson => gen_poisson(spec),
    }
}

/// Uniform(0, 1) factors with unit weights, densified, plus N(0, σ²) noise.
pub fn gen_gaussian(spec: &SyntheticSpec) -> Result<Synthetic> {
    let lin = spec.validate()?;
    if lin.numel() > spec.max_entries {
        return Err(GcpError::Generation(format!(
            "{} cells exceed the dense limit of {}",
            lin.numel(),
            spec.max_entries
        )));
    }
    let streams = RngStreams::new(spec.seed);
    let mut rng = streams.stream(0, Phase::Generator, 0, 0);
    let factors: Vec<Array2<f64>> = spec
        .dims
        .iter()
        .map(|&n| Array2::from_shape_fn((n, spec.rank), |_| rng.gen::<f64>()))
        .collect();
    let truth = KTensor::from_factors(factors)?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| GcpError::Generation(e.to_string()))?;
    let mut rng = streams.stream(0, Phase::Generator, 1, 0);
    let d = spec.dims.len();
    let n = lin.numel() as usize;
    let mut coords = Vec::with_capacity(n * d);
    let mut values = Vec::with_capacity(n);
    let mut c = vec![0; d];
    for key in 0..lin.numel() {
        lin.delinearize(key, &mut c);
        let m = model_value(&truth.weights, &truth.factors, &c);
        let mut v = m + noise.sample(&mut rng);
        if v == 0.0 {
            v = if m < 0.0 { -1e-300 } else { 1e-300 };
        }
        coords.extend_from_slice(&c);
        values.push(v);
    }
    let tensor = SparseTensor::from_flat(&spec.dims, coords, values)?;
    Ok(Synthetic { tensor, truth })
}

const DOMINANT_SHARE: f64 = 0.1;
const DOMINANT_BOOST: f64 = 10.0;
const CALIBRATION_ROUNDS: u64 = 10;
const CALIBRATION_TOL: f64 = 0.1;

fn allocate_events<R: Rng>(
    events: u64,
    comp: &WeightedIndex<f64>,
    rows: &[Vec<WeightedIndex<f64>>],
    lin: &Linearizer,
    rng: &mut R,
) -> HashMap<u64, f64> {
    let mut counts: HashMap<u64, f64> = HashMap::new();
    let mut c = vec![0; rows.len()];
    for _ in 0..events {
        let j = comp.sample(rng);
        for (ck, mode) in c.iter_mut().zip(rows) {
            *ck = mode[j].sample(rng);
        }
        *counts.entry(lin.linearize_unchecked(&c)).or_insert(0.0) += 1.0;
    }
    counts
}

/// Sparse count tensor drawn from a planted nonnegative model.
///
/// Each factor column is uniform(0, 1) with a tenth of its rows boosted
/// tenfold, then normalized to sum to one; component weights are uniform on
/// (0.5, 1.5), normalized the same way. Each event picks a component by
/// weight and one row per mode from that component's columns. The event
/// count is recalibrated until the nonzero fraction is within 10% of the
/// target. The returned model has weights scaled by the event count, so it
/// equals the expected count tensor.
pub fn gen_poisson(spec: &SyntheticSpec) -> Result<Synthetic> {
    let lin = spec.validate()?;
    let streams = RngStreams::new(spec.seed);
    let mut rng = streams.stream(0, Phase::Generator, 0, 0);
    let r = spec.rank;
    let mut factors = Vec::with_capacity(spec.dims.len());
    for &n in &spec.dims {
        let mut a = Array2::from_shape_fn((n, r), |_| rng.gen::<f64>());
        let boosted = ((n as f64 * DOMINANT_SHARE).round() as usize).max(1);
        for mut col in a.columns_mut() {
            for _ in 0..boosted {
                col[rng.gen_range(0..n)] *= DOMINANT_BOOST;
            }
            let s = col.sum();
            col /= s;
        }
        factors.push(a);
    }
    let mut lambda = Array1::from_shape_fn(r, |_| rng.gen_range(0.5..1.5));
    lambda /= lambda.sum();

    let comp = WeightedIndex::new(lambda.iter().copied()).map_err(|e| GcpError::Generation(e.to_string()))?;
    let rows: Vec<Vec<WeightedIndex<f64>>> = factors
        .iter()
        .map(|a| {
            a.columns()
                .into_iter()
                .map(|col| WeightedIndex::new(col.iter().copied()))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| GcpError::Generation(e.to_string()))?;

    let cells = lin.numel() as f64;
    let target = spec.fraction;
    // uniform-occupancy guess; skewed columns need more events
    let mut events = if target < 1.0 {
        (-cells * (1.0 - target).ln()).ceil().max(1.0)
    } else {
        (cells * cells.ln().max(1.0) * 4.0).ceil()
    };
    let mut achieved = 0.0;
    for round in 0..CALIBRATION_ROUNDS {
        let mut rng = streams.stream(0, Phase::Generator, 1, round);
        let counts = allocate_events(events as u64, &comp, &rows, &lin, &mut rng);
        achieved = counts.len() as f64 / cells;
        let hit = if target < 1.0 {
            (achieved - target).abs() <= CALIBRATION_TOL * target
        } else {
            counts.len() as u64 == lin.numel()
        };
        if hit {
            let mut keys: Vec<u64> = counts.keys().copied().collect();
            keys.sort_unstable();
            let d = spec.dims.len();
            let mut coords = Vec::with_capacity(keys.len() * d);
            let mut values = Vec::with_capacity(keys.len());
            let mut c = vec![0; d];
            for k in keys {
                lin.delinearize(k, &mut c);
                coords.extend_from_slice(&c);
                values.push(counts[&k]);
            }
            let tensor = SparseTensor::from_flat(&spec.dims, coords, values)?;
            let truth = KTensor::new(lambda * events, factors)?;
            return Ok(Synthetic { tensor, truth });
        }
        events = if target < 1.0 && achieved < 1.0 && achieved > 0.0 {
            (events * (1.0 - target).ln() / (1.0 - achieved).ln()).ceil().max(1.0)
        } else if achieved >= 1.0 {
            (events / 2.0).ceil().max(1.0)
        } else {
            events * 2.0
        };
    }
    Err(GcpError::Generation(format!(
        "nonzero fraction {achieved:.4} after {CALIBRATION_ROUNDS} calibration rounds, target {target}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    fn parse(text: &str) -> Result<SparseTensor> {
        parse_tns(text.as_bytes(), Path::new("t.tns"), TnsOptions::default())
    }

    #[test]
    fn single_entry_infers_dims() {
        let x = parse("1 1 1 2.5\n").unwrap();
        assert_eq!(x.dims(), &[1, 1, 1]);
        assert_eq!(x.get(&[0, 0, 0]).unwrap(), 2.5);
    }

    #[test]
    fn header_only_is_empty() {
        let x = parse("# dims: 3 4\n").unwrap();
        assert_eq!(x.dims(), &[3, 4]);
        assert_eq!(x.nnz(), 0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        for (text, line) in [
            ("1 1 1.0\n1 2\n", 2),
            ("1 x 1.0\n", 1),
            ("0 1 1.0\n", 1),
            ("# dims: 2 2\n3 1 1.0\n", 2),
            ("1 1 abc\n", 1),
        ] {
            match parse(text) {
                Err(GcpError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn duplicates_fail_or_merge() {
        let text = "1 1 1.0\n2 2 1.0\n1 1 2.0\n";
        assert!(matches!(parse(text), Err(GcpError::Parse { line: 3, .. })));
        let x = parse_tns(text.as_bytes(), Path::new("t"), TnsOptions { merge_duplicates: true }).unwrap();
        assert_eq!(x.get(&[0, 0]).unwrap(), 3.0);
        let x = parse_tns("1 1 1.0\n1 1 -1.0\n2 2 5\n".as_bytes(), Path::new("t"), TnsOptions { merge_duplicates: true }).unwrap();
        assert_eq!(x.nnz(), 1);
    }

    #[test]
    fn explicit_zero_dropped() {
        let x = parse("1 1 0.0\n2 3 1.5\n").unwrap();
        assert_eq!(x.nnz(), 1);
        assert_eq!(x.dims(), &[2, 3]);
    }

    #[test]
    fn empty_tensor_writes_header_only() {
        let x = SparseTensor::empty(&[3, 4]).unwrap();
        assert_eq!(format_tns(&x), "# dims: 3 4\n");
    }

    #[test]
    fn ktensor_text_layout() {
        let m = KTensor::from_factors(vec![Array2::ones((2, 1)), Array2::ones((2, 1))]).unwrap();
        let text = format_ktensor(&m);
        let one = "1.0000000000000000e0";
        assert_eq!(text, format!("2 1\n2 2\n{one}\n{one}\n{one}\n{one}\n{one}\n"));
        assert_eq!(parse_ktensor(&text, Path::new("k")).unwrap(), m);
    }

    #[test]
    fn ktensor_rejects_short_file() {
        assert!(matches!(
            parse_ktensor("2 1\n2 2\n1.0\n1.0\n", Path::new("k")),
            Err(GcpError::Parse { .. })
        ));
    }

    #[test]
    fn slices_in_order() {
        let x = SparseTensor::from_entries(
            &[2, 2, 3],
            &[(vec![0, 0, 2], 3.0), (vec![1, 1, 0], 1.0), (vec![0, 1, 1], 2.0)],
        )
        .unwrap();
        let got: Vec<f64> = stream_slices(&x).unwrap().map(|s| s.values()[0]).collect();
        assert_eq!(got, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn noiseless_gaussian_is_the_model() {
        let g = gen_gaussian(&SyntheticSpec::gaussian(&[3, 4, 2], 2, 0.0, 7)).unwrap();
        assert_eq!(g.tensor.nnz(), 24);
        for (c, v) in g.tensor.iter() {
            assert_eq!(v, g.truth.entry(c).unwrap());
        }
    }

    #[test]
    fn dense_cap_enforced() {
        let mut spec = SyntheticSpec::gaussian(&[10, 10], 1, 0.1, 1);
        spec.max_entries = 50;
        assert!(matches!(gen_gaussian(&spec), Err(GcpError::Generation(_))));
    }

    #[test]
    fn poisson_counts_and_saturation() {
        let p = gen_poisson(&SyntheticSpec::poisson(&[3, 2, 2], 2, 1.0, 5)).unwrap();
        assert_eq!(p.tensor.nnz(), 12);
        let total: f64 = p.tensor.values().iter().sum();
        assert!((total - p.truth.weights.sum()).abs() < 1e-6 * total);
        assert!(p.tensor.values().iter().all(|v| v.fract() == 0.0 && *v >= 1.0));
    }

    #[test]
    fn planted_weights_are_finite() {
        let p = gen_poisson(&SyntheticSpec::poisson(&[10, 10, 8], 3, 0.05, 2)).unwrap();
        assert_eq!(p.truth.rank(), 3);
        assert!(p.truth.factors.iter().all(|a| (a.sum() - 3.0).abs() < 1e-12));
    }
}
