use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};

/// Synchronously sampled multivariable input/output record.
///
/// Row `t` of `inputs` / `outputs` holds u(t+1) / y(t+1) (time is 1-based in
/// the model equations, 0-based in storage).
#[derive(Debug, Clone, PartialEq)]
pub struct IODataset {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    sample_time: f64,
}

impl IODataset {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>, sample_time: f64) -> Result<Self> {
        if inputs.nrows() != outputs.nrows() {
            return Err(dim_err(format!(
                "inputs have {} rows, outputs {}",
                inputs.nrows(),
                outputs.nrows()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(dim_err("dataset needs at least one sample"));
        }
        if inputs.ncols() == 0 || outputs.ncols() == 0 {
            return Err(dim_err("dataset needs at least one input and one output channel"));
        }
        if !(sample_time.is_finite() && sample_time > 0.0) {
            return Err(param_err(format!("sample time must be positive, got {sample_time}")));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(param_err("dataset contains non-finite entries"));
        }
        Ok(Self { inputs, outputs, sample_time })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    /// Hold-out split: the first `n` samples and the remainder.
    pub fn split_at(&self, n: usize) -> Result<(IODataset, IODataset)> {
        if n == 0 || n >= self.len() {
            return Err(param_err(format!("split point {n} outside 1..{}", self.len())));
        }
        let rest = self.len() - n;
        Ok((
            IODataset::new(
                self.inputs.rows(0, n).into_owned(),
                self.outputs.rows(0, n).into_owned(),
                self.sample_time,
            )?,
            IODataset::new(
                self.inputs.rows(n, rest).into_owned(),
                self.outputs.rows(n, rest).into_owned(),
                self.sample_time,
            )?,
        ))
    }

    /// The first `n` samples.
    pub fn prefix(&self, n: usize) -> Result<IODataset> {
        if n == 0 || n > self.len() {
            return Err(param_err(format!("prefix length {n} outside 1..={}", self.len())));
        }
        IODataset::new(
            self.inputs.rows(0, n).into_owned(),
            self.outputs.rows(0, n).into_owned(),
            self.sample_time,
        )
    }

    /// Reads the `u1..um,y1..yp` CSV layout. The sample time is not part of
    /// the file and must be supplied by the caller.
    pub fn read_csv<R: Read>(reader: R, sample_time: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut u_cols = Vec::new();
        let mut y_cols = Vec::new();
        for (idx, h) in headers.iter().enumerate() {
            let (kind, num) = h.split_at(1.min(h.len()));
            let channel: usize = num
                .parse()
                .map_err(|_| Error::Config(format!("unexpected CSV column `{h}`")))?;
            match kind {
                "u" => u_cols.push((channel, idx)),
                "y" => y_cols.push((channel, idx)),
                _ => return Err(Error::Config(format!("unexpected CSV column `{h}`"))),
            }
        }
        for cols in [&mut u_cols, &mut y_cols] {
            cols.sort();
            for (expected, (ch, _)) in cols.iter().enumerate() {
                if *ch != expected + 1 {
                    return Err(Error::Config("CSV channels must be numbered 1..n without gaps".into()));
                }
            }
        }
        let mut u_rows = Vec::new();
        let mut y_rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |idx: usize| -> Result<f64> {
                rec[idx]
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad number `{}`: {e}", &rec[idx])))
            };
            for &(_, idx) in &u_cols {
                u_rows.push(parse(idx)?);
            }
            for &(_, idx) in &y_cols {
                y_rows.push(parse(idx)?);
            }
        }
        let m = u_cols.len();
        let p = y_cols.len();
        if m == 0 || p == 0 {
            return Err(Error::Config("CSV needs at least one u and one y column".into()));
        }
        let n = u_rows.len() / m;
        IODataset::new(
            DMatrix::from_row_slice(n, m, &u_rows),
            DMatrix::from_row_slice(n, p, &y_rows),
            sample_time,
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.n_inputs()).map(|j| format!("u{j}")).collect();
        header.extend((1..=self.n_outputs()).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let row: Vec<String> = self
                .inputs
                .row(t)
                .iter()
                .chain(self.outputs.row(t).iter())
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Dimensions of an impulse response: lags `T`, outputs `p`, inputs `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub lags: usize,
    pub outputs: usize,
    pub inputs: usize,
}

impl Dims {
    pub fn new(lags: usize, outputs: usize, inputs: usize) -> Self {
        Self { lags, outputs, inputs }
    }

    pub fn siso(lags: usize) -> Self {
        Self::new(lags, 1, 1)
    }

    /// Number of scalar channels `p·m`.
    pub fn channels(&self) -> usize {
        self.outputs * self.inputs
    }

    /// Number of unknowns `d = p·m·T`.
    pub fn d(&self) -> usize {
        self.channels() * self.lags
    }

    /// Position of channel (output `i`, input `j`) in column-major pair order.
    pub fn channel_index(&self, i: usize, j: usize) -> usize {
        i + self.outputs * j
    }

    /// Index in the vectorized impulse response of lag `k` (1-based) of
    /// channel (`i`, `j`).
    pub fn vec_index(&self, k: usize, i: usize, j: usize) -> usize {
        self.channel_index(i, j) * self.lags + (k - 1)
    }
}

/// Truncated impulse response `g_1..g_T`, each a p×m matrix.
///
/// Stored already vectorized in channel-major order: for every (output,
/// input) pair, in column-major pair order, the `T` lags of that scalar
/// channel are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    dims: Dims,
    vec: DVector<f64>,
}

impl ImpulseResponse {
    pub fn zeros(dims: Dims) -> Self {
        Self { dims, vec: DVector::zeros(dims.d()) }
    }

    pub fn from_vec(dims: Dims, vec: DVector<f64>) -> Result<Self> {
        if dims.lags == 0 || dims.channels() == 0 {
            return Err(dim_err("impulse response needs T, p, m >= 1"));
        }
        if vec.len() != dims.d() {
            return Err(dim_err(format!("expected {} coefficients, got {}", dims.d(), vec.len())));
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(param_err("impulse response contains non-finite entries"));
        }
        Ok(Self { dims, vec })
    }

    /// Scalar SISO response from its lag coefficients.
    pub fn siso(coeffs: &[f64]) -> Result<Self> {
        Self::from_vec(Dims::siso(coeffs.len()), DVector::from_column_slice(coeffs))
    }

    /// Builds from the lag matrices `g_1..g_T`.
    pub fn from_lag_matrices(lags: &[DMatrix<f64>]) -> Result<Self> {
        let first = lags.first().ok_or_else(|| dim_err("no lag matrices"))?;
        let dims = Dims::new(lags.len(), first.nrows(), first.ncols());
        let mut vec = DVector::zeros(dims.d());
        for (k0, gk) in lags.iter().enumerate() {
            if gk.shape() != (dims.outputs, dims.inputs) {
                return Err(dim_err("lag matrices must share their shape"));
            }
            for j in 0..dims.inputs {
                for i in 0..dims.outputs {
                    vec[dims.vec_index(k0 + 1, i, j)] = gk[(i, j)];
                }
            }
        }
        Self::from_vec(dims, vec)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn lags(&self) -> usize {
        self.dims.lags
    }

    pub fn as_vec(&self) -> &DVector<f64> {
        &self.vec
    }

    pub fn into_vec(self) -> DVector<f64> {
        self.vec
    }

    /// Coefficient `[g_k]_{ij}` with 1-based lag `k`.
    pub fn coeff(&self, k: usize, i: usize, j: usize) -> f64 {
        self.vec[self.dims.vec_index(k, i, j)]
    }

    pub fn lag_matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dims.outputs, self.dims.inputs, |i, j| self.coeff(k, i, j))
    }

    pub fn lag_matrices(&self) -> Vec<DMatrix<f64>> {
        (1..=self.dims.lags).map(|k| self.lag_matrix(k)).collect()
    }

    /// The `T` lags of the scalar channel from input `j` to output `i`.
    pub fn channel(&self, i: usize, j: usize) -> &[f64] {
        let start = self.dims.channel_index(i, j) * self.dims.lags;
        &self.vec.as_slice()[start..start + self.dims.lags]
    }

    /// Same response with `lags` coefficients: truncated or zero-extended.
    pub fn with_lags(&self, lags: usize) -> Self {
        let dims = Dims::new(lags, self.dims.outputs, self.dims.inputs);
        let mut out = Self::zeros(dims);
        for j in 0..dims.inputs {
            for i in 0..dims.outputs {
                for k in 1..=lags.min(self.dims.lags) {
                    out.vec[dims.vec_index(k, i, j)] = self.coeff(k, i, j);
                }
            }
        }
        out
    }

    /// Noise-free output of the FIR convolution with zero initial conditions.
    pub fn convolve(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.dims.inputs {
            return Err(dim_err(format!(
                "response has {} inputs, signal has {}",
                self.dims.inputs,
                inputs.ncols()
            )));
        }
        let n = inputs.nrows();
        let mut y = DMatrix::zeros(n, self.dims.outputs);
        for j in 0..self.dims.inputs {
            for i in 0..self.dims.outputs {
                let g = self.channel(i, j);
                for t in 0..n {
                    let mut acc = 0.0;
                    for (k0, gk) in g.iter().enumerate().take(t) {
                        acc += gk * inputs[(t - k0 - 1, j)];
                    }
                    y[(t, i)] += acc;
                }
            }
        }
        Ok(y)
    }

    pub fn to_json(&self) -> ImpulseResponseJson {
        ImpulseResponseJson {
            lags: self.dims.lags,
            outputs: self.dims.outputs,
            inputs: self.dims.inputs,
            coeffs: (1..=self.dims.lags)
                .map(|k| {
                    (0..self.dims.outputs)
                        .map(|i| (0..self.dims.inputs).map(|j| self.coeff(k, i, j)).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_json(json: &ImpulseResponseJson) -> Result<Self> {
        let dims = Dims::new(json.lags, json.outputs, json.inputs);
        if json.coeffs.len() != dims.lags {
            return Err(dim_err("`coeffs` length must equal `lags`"));
        }
        let mut mats = Vec::with_capacity(dims.lags);
        for lag in &json.coeffs {
            if lag.len() != dims.outputs || lag.iter().any(|r| r.len() != dims.inputs) {
                return Err(dim_err("each lag must be an outputs×inputs array"));
            }
            mats.push(DMatrix::from_fn(dims.outputs, dims.inputs, |i, j| lag[i][j]));
        }
        Self::from_lag_matrices(&mats)
    }
}

/// JSON layout of an [`ImpulseResponse`]: `coeffs[k][i][j] = [g_{k+1}]_{ij}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponseJson {
    pub lags: usize,
    pub outputs: usize,
    pub inputs: usize,
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mimo() -> ImpulseResponse {
        let lags: Vec<DMatrix<f64>> =
            (1..=3).map(|k| DMatrix::from_fn(2, 3, |i, j| (k * 100 + i * 10 + j) as f64)).collect();
        ImpulseResponse::from_lag_matrices(&lags).unwrap()
    }

    #[test]
    fn channel_major_layout() {
        let g = mimo();
        let d = g.dims();
        assert_eq!(d.d(), 18);
        assert_eq!(d.channel_index(1, 2), 5);
        assert_eq!(g.channel(1, 2), &[112.0, 212.0, 312.0]);
        assert_eq!(g.coeff(2, 0, 1), 201.0);
        assert_eq!(g.lag_matrices()[2][(1, 0)], 310.0);
    }

    #[test]
    fn json_round_trip() {
        let g = mimo();
        let json = serde_json::to_string(&g.to_json()).unwrap();
        let back: ImpulseResponseJson = serde_json::from_str(&json).unwrap();
        assert_eq!(ImpulseResponse::from_json(&back).unwrap(), g);
    }

    #[test]
    fn with_lags_truncates_and_extends() {
        let g = ImpulseResponse::siso(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.with_lags(2).as_vec().as_slice(), &[1.0, 2.0]);
        assert_eq!(g.with_lags(5).as_vec().as_slice(), &[1.0, 2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn convolve_is_strictly_causal() {
        let g = ImpulseResponse::siso(&[1.0, 0.5]).unwrap();
        let u = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 2.0]);
        let y = g.convolve(&u).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let u = DMatrix::from_fn(5, 2, |t, j| (t + j) as f64 * 0.25);
        let y = DMatrix::from_fn(5, 1, |t, _| -(t as f64));
        let data = IODataset::new(u, y, 0.1).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("u1,u2,y1\n"));
        assert_eq!(IODataset::read_csv(&buf[..], 0.1).unwrap(), data);
        assert!(IODataset::read_csv("u1,y2\n1,2\n".as_bytes(), 1.0).is_err());
        assert!(IODataset::read_csv("u1,z1\n1,2\n".as_bytes(), 1.0).is_err());
        assert!(IODataset::read_csv("u1,y1\n1,x\n".as_bytes(), 1.0).is_err());
    }

    #[test]
    fn dataset_validation_and_split() {
        let ok = |n| IODataset::new(DMatrix::zeros(n, 1), DMatrix::zeros(n, 1), 1.0);
        assert!(IODataset::new(DMatrix::zeros(3, 1), DMatrix::zeros(2, 1), 1.0).is_err());
        assert!(IODataset::new(DMatrix::zeros(3, 1), DMatrix::zeros(3, 1), 0.0).is_err());
        assert!(ok(0).is_err());
        let data = ok(10).unwrap();
        let (a, b) = data.split_at(7).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert!(data.split_at(10).is_err());
        assert_eq!(data.prefix(4).unwrap().len(), 4);
    }
}
