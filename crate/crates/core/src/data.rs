//! Synthetic domain-shift generators and the dataset CSV format.
//!
//! Target-domain training data is an [`UnlabeledSet`]: once a pair leaves the
//! generator the training inputs carry no labels at all. Target labels live
//! only in `target_eval`, which training code never reads.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::augment::GridShape;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Batch;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet<S> {
    pub inputs: Matrix<S>,
    pub labels: Vec<usize>,
}

impl<S: Scalar> LabeledSet<S> {
    pub fn new(inputs: Matrix<S>, labels: Vec<usize>) -> Result<Self> {
        crate::error::check_dim("labels", inputs.rows(), labels.len())?;
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Batch<S> {
        let s = self.subset(idx);
        Batch::source(s.inputs, s.labels).expect("subset keeps labels aligned")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet<S> {
    pub inputs: Matrix<S>,
}

impl<S: Scalar> UnlabeledSet<S> {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch<S> {
        Batch::target(self.inputs.select(idx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetMeta {
    pub dim: usize,
    pub classes: usize,
    pub grid: Option<GridShape>,
    /// Valid per-coordinate input range, when bounded.
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair<S> {
    pub source: LabeledSet<S>,
    pub target_train: UnlabeledSet<S>,
    pub target_eval: LabeledSet<S>,
    pub meta: DatasetMeta,
}

impl<S: Scalar> DomainPair<S> {
    pub fn convert<T: Scalar>(&self) -> DomainPair<T> {
        let cv = |m: &Matrix<S>| m.map(|v| T::lit(v.as_f64()));
        DomainPair {
            source: LabeledSet {
                inputs: cv(&self.source.inputs),
                labels: self.source.labels.clone(),
            },
            target_train: UnlabeledSet {
                inputs: cv(&self.target_train.inputs),
            },
            target_eval: LabeledSet {
                inputs: cv(&self.target_eval.inputs),
                labels: self.target_eval.labels.clone(),
            },
            meta: self.meta,
        }
    }
}

/// Shuffles `(x, y)` and splits 70/30 into target train (labels dropped) and eval.
fn split_target<S: Scalar>(
    mut rows: Vec<(Vec<S>, usize)>,
    dim: usize,
    rng: &mut Rng,
) -> Result<(UnlabeledSet<S>, LabeledSet<S>)> {
    rng.shuffle(&mut rows);
    let n_train = (rows.len() as f64 * 0.7).round() as usize;
    let eval = rows.split_off(n_train);
    let train_x: Vec<Vec<S>> = rows.into_iter().map(|(x, _)| x).collect();
    let (eval_x, eval_y): (Vec<Vec<S>>, Vec<usize>) = eval.into_iter().unzip();
    Ok((
        UnlabeledSet {
            inputs: Matrix::from_rows(dim, &train_x)?,
        },
        LabeledSet::new(Matrix::from_rows(dim, &eval_x)?, eval_y)?,
    ))
}

fn shuffled_labeled<S: Scalar>(mut rows: Vec<(Vec<S>, usize)>, dim: usize, rng: &mut Rng) -> Result<LabeledSet<S>> {
    rng.shuffle(&mut rows);
    let (x, y): (Vec<Vec<S>>, Vec<usize>) = rows.into_iter().unzip();
    LabeledSet::new(Matrix::from_rows(dim, &x)?, y)
}

fn moons_sample(class: usize, noise_sd: f64, rng: &mut Rng) -> [f64; 2] {
    let t = rng.uniform_range(0.0, std::f64::consts::PI);
    // arcs centred on the origin: the standard layout shifted by (-0.5, -0.25)
    let (x, y) = if class == 0 {
        (t.cos() - 0.5, t.sin() - 0.25)
    } else {
        (0.5 - t.cos(), 0.25 - t.sin())
    };
    [x + noise_sd * rng.normal(), y + noise_sd * rng.normal()]
}

/// Two interleaved arcs; the target is the same generator rotated by
/// `rotation_deg` about the origin (the arcs' centre).
///
/// Source has `n` points (`n / 2` per class); target has `n` points split 70/30
/// into unlabeled train and labeled eval.
pub fn gen_two_moons_shift<S: Scalar>(
    n: usize,
    rotation_deg: f64,
    noise_sd: f64,
    rng: &mut Rng,
) -> Result<DomainPair<S>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Validation(format!("n = {n} must be positive and even")));
    }
    if !(0.0..=90.0).contains(&rotation_deg) {
        return Err(Error::Validation(format!("rotation {rotation_deg} outside [0, 90]")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Validation("noise_sd must be non-negative".into()));
    }
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let mut src = Vec::with_capacity(n);
    let mut tgt = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let [x, y] = moons_sample(class, noise_sd, rng);
        src.push((vec![S::lit(x), S::lit(y)], class));
        let [x, y] = moons_sample(class, noise_sd, rng);
        tgt.push((vec![S::lit(cos * x - sin * y), S::lit(sin * x + cos * y)], class));
    }
    let source = shuffled_labeled(src, 2, rng)?;
    let (target_train, target_eval) = split_target(tgt, 2, rng)?;
    Ok(DomainPair {
        source,
        target_train,
        target_eval,
        meta: DatasetMeta {
            dim: 2,
            classes: 2,
            grid: None,
            range: None,
        },
    })
}

/// Two unit-variance isotropic Gaussians with means `-e_0` and `+e_0`; the
/// target translates both by `mean_shift` along the first coordinate.
pub fn gen_gaussian_shift<S: Scalar>(n: usize, d: usize, mean_shift: f64, rng: &mut Rng) -> Result<DomainPair<S>> {
    if d == 0 {
        return Err(Error::Validation("dimension must be at least 1".into()));
    }
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Validation(format!("n = {n} must be positive and even")));
    }
    let draw = |class: usize, shift: f64, rng: &mut Rng| -> Vec<S> {
        (0..d)
            .map(|k| {
                let mean = match (k, class) {
                    (0, 0) => -1.0 + shift,
                    (0, _) => 1.0 + shift,
                    _ => 0.0,
                };
                S::lit(mean + rng.normal())
            })
            .collect()
    };
    let mut src = Vec::with_capacity(n);
    let mut tgt = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        src.push((draw(class, 0.0, rng), class));
        tgt.push((draw(class, mean_shift, rng), class));
    }
    let source = shuffled_labeled(src, d, rng)?;
    let (target_train, target_eval) = split_target(tgt, d, rng)?;
    Ok(DomainPair {
        source,
        target_train,
        target_eval,
        meta: DatasetMeta {
            dim: d,
            classes: 2,
            grid: None,
            range: None,
        },
    })
}

pub const GRID_CLASSES: usize = 4;
pub const GRID_NOISE_SD: f64 = 0.1;

/// Binary template for each class: horizontal bar, vertical bar, top-left
/// corner, bottom-right corner. Channels share the pattern.
pub fn grid_template(class: usize, shape: &GridShape) -> Vec<f64> {
    let (h, w) = (shape.h, shape.w);
    let band_r = (h / 2 - 1, h / 2);
    let band_c = (w / 2 - 1, w / 2);
    let on = |r: usize, c: usize| -> bool {
        match class {
            0 => r == band_r.0 || r == band_r.1,
            1 => c == band_c.0 || c == band_c.1,
            2 => (r < 2 && c < w - 2) || (c < 2 && r < h - 2),
            3 => (r >= h - 2 && c >= 2) || (c >= w - 2 && r >= 2),
            _ => false,
        }
    };
    let mut out = vec![0.0; shape.len()];
    for r in 0..h {
        for c in 0..w {
            if on(r, c) {
                for ch in 0..shape.c {
                    out[shape.index(r, c, ch)] = 1.0;
                }
            }
        }
    }
    out
}

fn grid_sample(class: usize, shape: &GridShape, style_shift: f64, noise_sd: f64, rng: &mut Rng) -> Vec<f64> {
    let intensity = rng.uniform_range(0.6, 1.0);
    grid_template(class, shape)
        .into_iter()
        .map(|t| {
            let v = t * intensity;
            let v = (1.0 - style_shift) * v + style_shift * (1.0 - v);
            (v + noise_sd * rng.normal()).clamp(0.0, 1.0)
        })
        .collect()
}

/// Four template classes on a grid with pixels in `[0, 1]`. The target applies
/// an intensity inversion of strength `style_shift`.
pub fn gen_grid_shift<S: Scalar>(n: usize, shape: GridShape, style_shift: f64, rng: &mut Rng) -> Result<DomainPair<S>> {
    gen_grid_shift_with_noise(n, shape, style_shift, GRID_NOISE_SD, rng)
}

pub fn gen_grid_shift_with_noise<S: Scalar>(
    n: usize,
    shape: GridShape,
    style_shift: f64,
    noise_sd: f64,
    rng: &mut Rng,
) -> Result<DomainPair<S>> {
    let shape = GridShape::new(shape.h, shape.w, shape.c)?;
    if shape.h < 4 || shape.w < 4 {
        return Err(Error::Validation("grid must be at least 4x4".into()));
    }
    if n == 0 {
        return Err(Error::Validation("n must be positive".into()));
    }
    if !(0.0..=1.0).contains(&style_shift) {
        return Err(Error::Validation(format!("style shift {style_shift} outside [0, 1]")));
    }
    let to_s = |v: Vec<f64>| v.into_iter().map(S::lit).collect::<Vec<S>>();
    let mut src = Vec::with_capacity(n);
    let mut tgt = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % GRID_CLASSES;
        src.push((to_s(grid_sample(class, &shape, 0.0, noise_sd, rng)), class));
        tgt.push((to_s(grid_sample(class, &shape, style_shift, noise_sd, rng)), class));
    }
    let dim = shape.len();
    let source = shuffled_labeled(src, dim, rng)?;
    let (target_train, target_eval) = split_target(tgt, dim, rng)?;
    Ok(DomainPair {
        source,
        target_train,
        target_eval,
        meta: DatasetMeta {
            dim,
            classes: GRID_CLASSES,
            grid: Some(shape),
            range: Some((0.0, 1.0)),
        },
    })
}

/// Writes `feature_0..feature_{d-1},label,domain`; unlabeled rows use `-1`.
pub fn save_dataset<S: Scalar>(pair: &DomainPair<S>, path: &Path) -> Result<()> {
    let mut out = String::new();
    if let Some(g) = pair.meta.grid {
        writeln!(out, "# grid {} {} {}", g.h, g.w, g.c).unwrap();
    }
    let d = pair.meta.dim;
    let header: Vec<String> = (0..d)
        .map(|k| format!("feature_{k}"))
        .chain(["label".to_string(), "domain".to_string()])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let mut row = |x: &[S], label: Option<usize>, domain: &str| {
        for v in x {
            write!(out, "{v},").unwrap();
        }
        match label {
            Some(y) => write!(out, "{y},").unwrap(),
            None => out.push_str("-1,"),
        }
        out.push_str(domain);
        out.push('\n');
    };
    for (x, &y) in pair.source.inputs.iter_rows().zip(&pair.source.labels) {
        row(x, Some(y), "s");
    }
    for x in pair.target_train.inputs.iter_rows() {
        row(x, None, "t");
    }
    for (x, &y) in pair.target_eval.inputs.iter_rows().zip(&pair.target_eval.labels) {
        row(x, Some(y), "t");
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_grid_line(line: &str) -> Result<Option<GridShape>> {
    let parts: Vec<&str> = line.trim_start_matches('#').split_whitespace().collect();
    if parts.first() != Some(&"grid") {
        return Ok(None);
    }
    let nums: Vec<usize> = parts[1..]
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Schema(format!("bad grid sidecar line `{line}`")))?;
    match nums.as_slice() {
        [h, w, c] => Ok(Some(GridShape::new(*h, *w, *c)?)),
        _ => Err(Error::Schema(format!("bad grid sidecar line `{line}`"))),
    }
}

pub fn load_dataset<S: Scalar>(path: &Path) -> Result<DomainPair<S>> {
    let text = fs::read_to_string(path)?;
    let mut grid = None;
    for line in text.lines().filter(|l| l.starts_with('#')) {
        if let Some(g) = parse_grid_line(line)? {
            grid = Some(g);
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    for required in ["label", "domain"] {
        if !cols.contains(&required) {
            return Err(Error::Schema(format!("missing `{required}` column")));
        }
    }
    let d = cols.len() - 2;
    for (k, name) in cols[..d].iter().enumerate() {
        if *name != format!("feature_{k}") {
            return Err(Error::Schema(format!("column {k} is `{name}`, expected `feature_{k}`")));
        }
    }
    if cols[d] != "label" || cols[d + 1] != "domain" {
        return Err(Error::Schema(
            "`label` and `domain` must be the last two columns".into(),
        ));
    }
    if d == 0 {
        return Err(Error::Schema("no feature columns".into()));
    }
    if let Some(g) = grid {
        crate::error::check_dim("grid sidecar vs feature columns", g.len(), d)?;
    }
    let mut source = (Matrix::empty(d), Vec::new());
    let mut target_train = Matrix::empty(d);
    let mut target_eval = (Matrix::empty(d), Vec::new());
    let mut buf = Vec::with_capacity(d);
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("row {}: {e}", line + 1)))?;
        if rec.len() != d + 2 {
            return Err(Error::Schema(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                d + 2
            )));
        }
        buf.clear();
        for (k, field) in rec.iter().take(d).enumerate() {
            let v = field
                .trim()
                .parse::<S>()
                .map_err(|_| Error::Schema(format!("row {}: feature_{k} = `{field}` is not a number", line + 1)))?;
            buf.push(v);
        }
        let label: i64 = rec[d]
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("row {}: bad label `{}`", line + 1, &rec[d])))?;
        if label < -1 {
            return Err(Error::Schema(format!("row {}: label {label} below -1", line + 1)));
        }
        match (rec[d + 1].trim(), label) {
            ("s", -1) => return Err(Error::Schema(format!("row {}: source rows must be labeled", line + 1))),
            ("s", y) => {
                source.0.push_row(&buf)?;
                source.1.push(y as usize);
            }
            ("t", -1) => target_train.push_row(&buf)?,
            ("t", y) => {
                target_eval.0.push_row(&buf)?;
                target_eval.1.push(y as usize);
            }
            (other, _) => return Err(Error::Schema(format!("row {}: unknown domain tag `{other}`", line + 1))),
        }
    }
    let classes = source.1.iter().chain(&target_eval.1).max().map_or(0, |&m| m + 1);
    Ok(DomainPair {
        source: LabeledSet::new(source.0, source.1)?,
        target_train: UnlabeledSet { inputs: target_train },
        target_eval: LabeledSet::new(target_eval.0, target_eval.1)?,
        meta: DatasetMeta {
            dim: d,
            classes,
            grid,
            range: grid.map(|_| (0.0, 1.0)),
        },
    })
}
