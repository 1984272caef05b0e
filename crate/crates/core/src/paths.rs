//! Discrete time series viewed as piecewise-linear paths of bounded variation.
//!
//! A [`TimeSeries`] stores an explicit, strictly increasing time grid and one
//! row of `dim` values per grid point. The path is the linear interpolation of
//! the rows. A single-point series is the null path: it has no increments and
//! is the identity for [`concat`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    times: Vec<f64>,
    /// Row-major `(len, dim)` values.
    values: Vec<f64>,
    dim: usize,
}

impl TimeSeries {
    /// Build from a time grid and row-major values.
    pub fn from_flat(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidSeries("no grid points".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidSeries("dimension must be positive".into()));
        }
        if values.len() != times.len() * dim {
            return Err(Error::InvalidSeries(format!(
                "expected {} values for {} points of dimension {}, got {}",
                times.len() * dim,
                times.len(),
                dim,
                values.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite time at index {i}")));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSeries(format!(
                "times not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite value at row {}, channel {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { times, values, dim })
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::InvalidSeries(format!("ragged row {i}")));
        }
        Self::from_flat(times, rows.concat(), dim)
    }

    /// Series on the uniform grid `0, 1, ..., len-1`.
    pub fn uniform(values: Vec<f64>, dim: usize) -> Result<Self> {
        let len = values.len().checked_div(dim).unwrap_or(0);
        Self::from_flat((0..len).map(|i| i as f64).collect(), values, dim)
    }

    /// The null path sitting at `point` at time `t`.
    pub fn null(t: f64, point: &[f64]) -> Result<Self> {
        Self::from_flat(vec![t], point.to_vec(), point.len())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid points, `N + 1`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of linear segments `N`.
    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn is_null(&self) -> bool {
        self.times.len() == 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.row(0)
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len() - 1)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Value of channel `c` at every grid point.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>, dim: usize) -> Result<Self> {
        Self::from_flat(self.times.clone(), values, dim)
    }
}

/// A non-empty collection of series sharing one grid and one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatch {
    items: Vec<TimeSeries>,
}

impl PathBatch {
    pub fn new(items: Vec<TimeSeries>) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyBatch)?;
        for (i, s) in items.iter().enumerate().skip(1) {
            if s.dim() != first.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} has dimension {}, expected {}",
                    s.dim(),
                    first.dim()
                )));
            }
            if s.times() != first.times() {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} does not share the batch time grid"
                )));
            }
        }
        Ok(Self { items })
    }

    /// Build from `n` row-major blocks of `(times.len(), dim)` values on a common grid.
    pub fn from_blocks(times: &[f64], blocks: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        let items = blocks
            .into_iter()
            .map(|b| TimeSeries::from_flat(times.to_vec(), b, dim))
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }

    pub fn items(&self) -> &[TimeSeries] {
        &self.items
    }

    pub fn into_items(self) -> Vec<TimeSeries> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.items[0].dim()
    }

    pub fn times(&self) -> &[f64] {
        self.items[0].times()
    }

    /// Samples selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let items = indices
            .iter()
            .map(|&i| {
                self.items
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::OutOfRange(format!("sample index {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }

    /// Split into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Self, Self)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot split a batch of {} at {n}",
                self.len()
            )));
        }
        Ok((
            Self::new(self.items[..n].to_vec())?,
            Self::new(self.items[n..].to_vec())?,
        ))
    }

    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&TimeSeries) -> Result<TimeSeries>,
    {
        Self::new(self.items.iter().map(f).collect::<Result<Vec<_>>>()?)
    }
}

/// Optionally prepend a normalised time channel and/or subtract the first row.
///
/// The time channel is `(t_i - t_0) / (t_N - t_0)`, so it always runs over
/// `[0, 1]`; for a null path it is `0`.
pub fn lift(series: &TimeSeries, add_time: bool, basepoint: bool) -> TimeSeries {
    let d = series.dim();
    let out_dim = d + usize::from(add_time);
    let t0 = series.times[0];
    let span = series.times[series.len() - 1] - t0;
    let origin = series.first().to_vec();
    let mut values = Vec::with_capacity(series.len() * out_dim);
    for (i, row) in series.rows().enumerate() {
        if add_time {
            values.push(if span > 0.0 {
                (series.times[i] - t0) / span
            } else {
                0.0
            });
        }
        if basepoint {
            values.extend(row.iter().zip(&origin).map(|(x, o)| x - o));
        } else {
            values.extend_from_slice(row);
        }
    }
    TimeSeries {
        times: series.times.clone(),
        values,
        dim: out_dim,
    }
}

/// The increments `x_i - x_{i-1}`, `i = 1..N`, row-major `(N, d)`.
pub fn increments(series: &TimeSeries) -> Vec<f64> {
    let d = series.dim;
    series
        .values
        .windows(2 * d)
        .step_by(d)
        .flat_map(|w| (0..d).map(move |c| w[d + c] - w[c]))
        .collect()
}

/// Path concatenation: `y` is translated to start where `x` ends, and its
/// grid is shifted to continue after `x`'s last time.
pub fn concat(x: &TimeSeries, y: &TimeSeries) -> Result<TimeSeries> {
    if x.dim != y.dim {
        return Err(Error::DimensionMismatch {
            expected: x.dim,
            found: y.dim,
        });
    }
    let d = x.dim;
    let t_end = x.times[x.len() - 1];
    let dt0 = y.times[0];
    let shift: Vec<f64> = x.last().iter().zip(y.first()).map(|(a, b)| a - b).collect();
    let mut times = x.times.clone();
    let mut values = x.values.clone();
    for i in 1..y.len() {
        times.push(t_end + (y.times[i] - dt0));
        values.extend(y.row(i).iter().zip(&shift).map(|(v, s)| v + s));
    }
    TimeSeries::from_flat(times, values, d)
}

/// Time reversal: the path is run backwards, starting from its endpoint.
pub fn reverse(x: &TimeSeries) -> TimeSeries {
    let n = x.len();
    let t0 = x.times[0];
    let t_end = x.times[n - 1];
    let times = (0..n).map(|i| t0 + (t_end - x.times[n - 1 - i])).collect();
    let values = (0..n).rev().flat_map(|i| x.row(i).to_vec()).collect();
    TimeSeries {
        times,
        values,
        dim: x.dim,
    }
}

/// Total variation of the interpolated path, `sum_i |dx_i|_2`.
pub fn total_variation(x: &TimeSeries) -> f64 {
    increments(x)
        .chunks_exact(x.dim)
        .map(|dx| dx.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

/// Pointwise difference of two series on a common grid.
pub fn difference(x: &TimeSeries, y: &TimeSeries) -> Result<TimeSeries> {
    if x.dim != y.dim {
        return Err(Error::DimensionMismatch {
            expected: x.dim,
            found: y.dim,
        });
    }
    if x.times != y.times {
        return Err(Error::ShapeMismatch("series do not share a grid".into()));
    }
    let values = x.values.iter().zip(&y.values).map(|(a, b)| a - b).collect();
    TimeSeries::from_flat(x.times.clone(), values, x.dim)
}

/// Evaluate the piecewise-linear interpolant on `new_times`.
pub fn resample_linear(x: &TimeSeries, new_times: &[f64]) -> Result<TimeSeries> {
    let t0 = x.times[0];
    let t_end = x.times[x.len() - 1];
    let d = x.dim;
    let mut values = Vec::with_capacity(new_times.len() * d);
    let mut seg = 0usize;
    for &t in new_times {
        if !(t >= t0 && t <= t_end) {
            return Err(Error::OutOfRange(format!(
                "time {t} outside [{t0}, {t_end}]"
            )));
        }
        if x.is_null() {
            values.extend_from_slice(x.first());
            continue;
        }
        while seg + 1 < x.segments() && t > x.times[seg + 1] {
            seg += 1;
        }
        while seg > 0 && t < x.times[seg] {
            seg -= 1;
        }
        let (ta, tb) = (x.times[seg], x.times[seg + 1]);
        let w = (t - ta) / (tb - ta);
        let (ra, rb) = (x.row(seg), x.row(seg + 1));
        values.extend((0..d).map(|c| {
            if w == 0.0 {
                ra[c]
            } else if w == 1.0 {
                rb[c]
            } else {
                ra[c] + w * (rb[c] - ra[c])
            }
        }));
    }
    TimeSeries::from_flat(new_times.to_vec(), values, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_1d(values: &[f64]) -> TimeSeries {
        TimeSeries::uniform(values.to_vec(), 1).unwrap()
    }

    #[test]
    fn lift_with_time_and_basepoint() {
        let x = TimeSeries::from_flat(vec![0.0, 1.0], vec![5.0, 7.0], 1).unwrap();
        let l = lift(&x, true, true);
        assert_eq!(l.dim(), 2);
        assert_eq!(l.values(), &[0.0, 0.0, 1.0, 2.0]);
        assert_eq!(lift(&x, false, false), x);
    }

    #[test]
    fn lift_time_channel_on_three_steps() {
        let x = TimeSeries::from_flat(vec![2.0, 3.0, 4.0, 5.0], vec![1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let l = lift(&x, true, false);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (got, want) in l.channel(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
        // irregular grid keeps its shape
        let y = TimeSeries::from_flat(vec![0.0, 0.5, 2.0], vec![0.0; 3], 1).unwrap();
        assert_eq!(lift(&y, true, false).channel(0), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn increments_examples() {
        assert_eq!(increments(&series_1d(&[0.0, 1.0, 0.0])), vec![1.0, -1.0]);
        assert!(increments(&series_1d(&[3.0, 3.0, 3.0])).iter().all(|v| *v == 0.0));
        let b = lift(&series_1d(&[4.0, 1.0]), false, true);
        assert_eq!(b.first(), &[0.0]);
    }

    #[test]
    fn concat_shift_rule() {
        let x = series_1d(&[0.0, 1.0]);
        let y = series_1d(&[0.0, 1.0]);
        let z = concat(&x, &y).unwrap();
        assert_eq!(z.values(), &[0.0, 1.0, 2.0]);
        assert_eq!(z.times(), &[0.0, 1.0, 2.0]);
        let null = TimeSeries::null(0.0, &[9.0]).unwrap();
        assert_eq!(concat(&x, &null).unwrap(), x);
        let bad = TimeSeries::uniform(vec![0.0, 0.0, 1.0, 1.0], 2).unwrap();
        assert!(matches!(concat(&x, &bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn reverse_examples() {
        let x = TimeSeries::from_flat(vec![0.0, 0.5, 2.0], vec![0.0, 1.0, 3.0], 1).unwrap();
        let r = reverse(&x);
        assert_eq!(r.values(), &[3.0, 1.0, 0.0]);
        assert_eq!(r.times(), &[0.0, 1.5, 2.0]);
        assert_eq!(reverse(&r), x);
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(total_variation(&series_1d(&[0.0, 1.0, 0.0])), 2.0);
        assert_eq!(total_variation(&series_1d(&[2.0, 2.0])), 0.0);
        let x = TimeSeries::uniform(vec![0.0, 0.0, 3.0, 4.0], 2).unwrap();
        assert!((total_variation(&x) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn resample_examples() {
        let x = TimeSeries::from_flat(vec![0.0, 1.0], vec![0.0, 2.0], 1).unwrap();
        let r = resample_linear(&x, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(r.values(), &[0.0, 1.0, 2.0]);
        assert_eq!(resample_linear(&x, x.times()).unwrap(), x);
        assert!(matches!(
            resample_linear(&x, &[0.0, 1.5]),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn validation_rejects_bad_series() {
        assert!(TimeSeries::from_flat(vec![0.0, 0.0], vec![1.0, 2.0], 1).is_err());
        assert!(TimeSeries::from_flat(vec![0.0, 1.0], vec![1.0, f64::NAN], 1).is_err());
        assert!(TimeSeries::from_flat(vec![0.0, 1.0], vec![1.0], 1).is_err());
        let a = series_1d(&[0.0, 1.0]);
        let b = series_1d(&[0.0, 1.0, 2.0]);
        assert!(PathBatch::new(vec![a, b]).is_err());
        assert!(matches!(PathBatch::new(vec![]), Err(Error::EmptyBatch)));
    }
}
