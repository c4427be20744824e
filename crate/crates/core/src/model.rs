//! Moment-condition models, datasets and moment evaluation.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// A rectangular sample of `n` observations, each a vector of length `nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    nx: usize,
    values: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major values.
    pub fn from_row_major(nx: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 {
            return Err(Error::BadData("observations must have at least one column".into()));
        }
        if values.is_empty() {
            return Err(Error::BadData("dataset has no observations".into()));
        }
        if values.len() % nx != 0 {
            return Err(Error::BadData(format!(
                "{} values do not form rows of length {nx}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadData(format!("non-finite entry in row {}", pos / nx)));
        }
        Ok(Self { nx, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nx = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != nx) {
            return Err(Error::BadData(format!("row {bad} has a different length than row 0")));
        }
        Self::from_row_major(nx, rows.concat())
    }

    /// One-column dataset.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        Self::from_row_major(1, values)
    }

    /// Reads comma-separated reals with an optional header line.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut nx = None;
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(str::parse::<f64>).collect();
            let row = match parsed {
                Ok(row) => row,
                // a single header line is allowed
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(Error::Parse(format!("line {}: {e}", line + 1)));
                }
            };
            match nx {
                None => nx = Some(row.len()),
                Some(k) if k != row.len() => {
                    return Err(Error::BadData(format!(
                        "line {} has {} fields, expected {k}",
                        line + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            values.extend(row);
        }
        Self::from_row_major(nx.unwrap_or(0), values)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.nx
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.nx..(i + 1) * self.nx]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.nx)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Writes the dataset as headerless CSV with 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Per-coordinate search bounds used to place multistart points.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l < u), "empty theta box");
        Self { lower, upper }
    }

    /// `center ± 5` in every coordinate.
    pub fn around(center: &[f64]) -> Self {
        Self::new(
            center.iter().map(|c| c - 5.0).collect(),
            center.iter().map(|c| c + 5.0).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    /// `k` points equally spaced along the box diagonal, endpoints included.
    pub fn diagonal_grid(&self, k: usize) -> Vec<Vec<f64>> {
        match k {
            0 => Vec::new(),
            1 => vec![self.center()],
            _ => (0..k)
                .map(|s| {
                    let t = s as f64 / (k - 1) as f64;
                    self.lower
                        .iter()
                        .zip(&self.upper)
                        .map(|(l, u)| l + t * (u - l))
                        .collect()
                })
                .collect(),
        }
    }
}

/// A moment-condition model `E[g(x, θ)] = 0`.
///
/// Implementations must be pure functions of their arguments. Jacobians and
/// second derivatives fall back to central differences when not overridden.
pub trait MomentModel: Send + Sync {
    /// Parameter dimension.
    fn n_theta(&self) -> usize;
    /// Number of moment conditions.
    fn n_moments(&self) -> usize;
    /// Length of one observation.
    fn n_x(&self) -> usize;

    /// Writes `g(x, θ)` into `out` (length `n_moments`).
    fn moments(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// Writes `∂g/∂θ'` into `out`, row-major `n_moments × n_theta`.
    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        numeric_jacobian_into(self, x, theta, out);
    }

    /// Writes `∂²g_j/∂θ∂θ'` into `out`, row-major `n_theta × n_theta`.
    fn second_derivative(&self, x: &[f64], theta: &[f64], j: usize, out: &mut [f64]) {
        numeric_second_derivative_into(self, x, theta, j, out);
    }

    fn theta_box(&self) -> ThetaBox {
        ThetaBox::around(&vec![0.0; self.n_theta()])
    }
}

impl<M: MomentModel + ?Sized> MomentModel for &M {
    fn n_theta(&self) -> usize {
        (**self).n_theta()
    }
    fn n_moments(&self) -> usize {
        (**self).n_moments()
    }
    fn n_x(&self) -> usize {
        (**self).n_x()
    }
    fn moments(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).moments(x, theta, out)
    }
    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).jacobian(x, theta, out)
    }
    fn second_derivative(&self, x: &[f64], theta: &[f64], j: usize, out: &mut [f64]) {
        (**self).second_derivative(x, theta, j, out)
    }
    fn theta_box(&self) -> ThetaBox {
        (**self).theta_box()
    }
}

impl<M: MomentModel + ?Sized> MomentModel for Box<M> {
    fn n_theta(&self) -> usize {
        (**self).n_theta()
    }
    fn n_moments(&self) -> usize {
        (**self).n_moments()
    }
    fn n_x(&self) -> usize {
        (**self).n_x()
    }
    fn moments(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).moments(x, theta, out)
    }
    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).jacobian(x, theta, out)
    }
    fn second_derivative(&self, x: &[f64], theta: &[f64], j: usize, out: &mut [f64]) {
        (**self).second_derivative(x, theta, j, out)
    }
    fn theta_box(&self) -> ThetaBox {
        (**self).theta_box()
    }
}

/// Central-difference step for coordinate value `v`.
pub(crate) fn fd_step(v: f64) -> f64 {
    f64::EPSILON.cbrt() * v.abs().max(1.0)
}

fn numeric_jacobian_into<M: MomentModel + ?Sized>(
    model: &M,
    x: &[f64],
    theta: &[f64],
    out: &mut [f64],
) {
    let ng = model.n_moments();
    let nt = model.n_theta();
    let mut tp = theta.to_vec();
    let mut gp = vec![0.0; ng];
    let mut gm = vec![0.0; ng];
    for j in 0..nt {
        let h = fd_step(theta[j]);
        tp[j] = theta[j] + h;
        let hp = tp[j] - theta[j];
        model.moments(x, &tp, &mut gp);
        tp[j] = theta[j] - h;
        let hm = theta[j] - tp[j];
        model.moments(x, &tp, &mut gm);
        tp[j] = theta[j];
        for k in 0..ng {
            out[k * nt + j] = (gp[k] - gm[k]) / (hp + hm);
        }
    }
}

fn numeric_second_derivative_into<M: MomentModel + ?Sized>(
    model: &M,
    x: &[f64],
    theta: &[f64],
    j: usize,
    out: &mut [f64],
) {
    let ng = model.n_moments();
    let nt = model.n_theta();
    let mut tp = theta.to_vec();
    let mut jp = vec![0.0; ng * nt];
    let mut jm = vec![0.0; ng * nt];
    for k in 0..nt {
        let h = fd_step(theta[k]);
        tp[k] = theta[k] + h;
        model.jacobian(x, &tp, &mut jp);
        tp[k] = theta[k] - h;
        model.jacobian(x, &tp, &mut jm);
        tp[k] = theta[k];
        for l in 0..nt {
            out[k * nt + l] = (jp[j * nt + l] - jm[j * nt + l]) / (2.0 * h);
        }
    }
    for k in 0..nt {
        for l in 0..k {
            let avg = 0.5 * (out[k * nt + l] + out[l * nt + k]);
            out[k * nt + l] = avg;
            out[l * nt + k] = avg;
        }
    }
}

/// Central-difference Jacobian of `g(x, ·)` at `theta`, row-major `Ng × Nθ`.
///
/// Step `h_j = cbrt(eps) · max(1, |θ_j|)`.
pub fn numeric_jacobian<M: MomentModel + ?Sized>(
    model: &M,
    x: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>> {
    check_theta(model, theta)?;
    let mut out = vec![0.0; model.n_moments() * model.n_theta()];
    numeric_jacobian_into(model, x, theta, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMoment { row: 0 });
    }
    Ok(out)
}

/// The `n × Ng` matrix of moment evaluations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    ng: usize,
    data: Vec<f64>,
}

impl MomentMatrix {
    pub fn from_row_major(ng: usize, data: Vec<f64>) -> Result<Self> {
        if ng == 0 || data.is_empty() || data.len() % ng != 0 {
            return Err(Error::Dimension(format!(
                "{} values cannot form rows of {ng} moments",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMoment { row: pos / ng });
        }
        Ok(Self { ng, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ng = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != ng) {
            return Err(Error::Dimension("ragged moment rows".into()));
        }
        Self::from_row_major(ng, rows.concat())
    }

    /// Single moment, one value per observation.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::from_row_major(1, values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.ng
    }

    pub fn ng(&self) -> usize {
        self.ng
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ng..(i + 1) * self.ng]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.ng)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Column means `ĝ`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.ng];
        for row in self.rows() {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let n = self.n() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Largest Euclidean row norm.
    pub fn max_row_norm(&self) -> f64 {
        self.rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Applies `row ↦ A·row` to every observation (`A` row-major `m × Ng`).
    pub fn transform(&self, a: &[f64], m: usize) -> Result<Self> {
        if a.len() != m * self.ng {
            return Err(Error::Dimension("transform has wrong shape".into()));
        }
        let mut data = Vec::with_capacity(self.n() * m);
        for row in self.rows() {
            for r in 0..m {
                data.push((0..self.ng).map(|c| a[r * self.ng + c] * row[c]).sum());
            }
        }
        Self::from_row_major(m, data)
    }

    /// Horizontal concatenation `[self other]`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.n() != other.n() {
            return Err(Error::Dimension("row counts differ".into()));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for (a, b) in self.rows().zip(other.rows()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Self::from_row_major(self.ng + other.ng, data)
    }

    /// Keeps the listed columns.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.iter().any(|&c| c >= self.ng) {
            return Err(Error::Dimension("column index out of range".into()));
        }
        let data = self.rows().flat_map(|r| cols.iter().map(move |&c| r[c])).collect();
        Self::from_row_major(cols.len(), data)
    }
}

fn check_theta<M: MomentModel + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.n_theta() {
        return Err(Error::Dimension(format!(
            "theta has length {}, model expects {}",
            theta.len(),
            model.n_theta()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("theta is not finite".into()));
    }
    Ok(())
}

fn check_data<M: MomentModel + ?Sized>(model: &M, data: &Dataset) -> Result<()> {
    if data.nx() != model.n_x() {
        return Err(Error::Dimension(format!(
            "dataset has {} columns, model expects {}",
            data.nx(),
            model.n_x()
        )));
    }
    Ok(())
}

/// Evaluates `g(x_i, θ)` for every observation.
pub fn eval_moments<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> Result<MomentMatrix> {
    check_theta(model, theta)?;
    check_data(model, data)?;
    let ng = model.n_moments();
    let mut out = vec![0.0; data.n() * ng];
    for (row, x) in out.chunks_exact_mut(ng).zip(data.rows()) {
        model.moments(x, theta, row);
    }
    MomentMatrix::from_row_major(ng, out)
}

/// Per-observation Jacobians `G_i`, flattened as `n` blocks of row-major
/// `Ng × Nθ`.
pub fn eval_jacobians<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> Result<Vec<f64>> {
    check_theta(model, theta)?;
    check_data(model, data)?;
    let block = model.n_moments() * model.n_theta();
    let mut out = vec![0.0; data.n() * block];
    for (i, (dst, x)) in out.chunks_exact_mut(block).zip(data.rows()).enumerate() {
        model.jacobian(x, theta, dst);
        if dst.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMoment { row: i });
        }
    }
    Ok(out)
}

/// Sample mean of `∂²g_j/∂θ∂θ'` for every `j`, each row-major `Nθ × Nθ`.
pub fn mean_second_derivatives<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_theta(model, theta)?;
    check_data(model, data)?;
    let nt = model.n_theta();
    let mut buf = vec![0.0; nt * nt];
    let mut means = vec![vec![0.0; nt * nt]; model.n_moments()];
    for (i, x) in data.rows().enumerate() {
        for (j, acc) in means.iter_mut().enumerate() {
            model.second_derivative(x, theta, j, &mut buf);
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteMoment { row: i });
            }
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
    }
    let n = data.n() as f64;
    for m in &mut means {
        m.iter_mut().for_each(|v| *v /= n);
    }
    Ok(means)
}
