//! Feature-partitioned datasets: column blocks `A_i`, response `b` and an
//! optional generating model `ω`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Noise variance used by the synthetic regression model unless overridden.
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePartition<T> {
    blocks: Vec<Array2<T>>,
    response: Array1<T>,
    truth: Option<Array1<T>>,
    seed: Option<u64>,
}

impl<T: Real> FeaturePartition<T> {
    pub fn new(blocks: Vec<Array2<T>>, response: Array1<T>, truth: Option<Array1<T>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidSize("a partition needs at least one block".into()));
        }
        let m = response.len();
        for (i, block) in blocks.iter().enumerate() {
            if block.nrows() != m {
                return Err(Error::DimensionMismatch(format!(
                    "block {} has {} rows but the response has {m}",
                    i + 1,
                    block.nrows()
                )));
            }
            if block.ncols() == 0 {
                return Err(Error::InvalidSize(format!("block {} has no columns", i + 1)));
            }
        }
        let p: usize = blocks.iter().map(|b| b.ncols()).sum();
        if let Some(truth) = &truth {
            if truth.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "truth has length {} but the blocks hold {p} features",
                    truth.len()
                )));
            }
        }
        Ok(Self {
            blocks,
            response,
            truth,
            seed: None,
        })
    }

    /// Draws `A` with i.i.d. standard normal entries, `ω ~ N(0, I_P)`,
    /// `ψ ~ N(0, noise_variance·I_M)` and sets `b = Aω + ψ`.
    pub fn synthesize(num_agents: usize, num_samples: usize, sizes: &[usize], noise_variance: f64, seed: u64) -> Result<Self> {
        if num_agents == 0 || sizes.len() != num_agents {
            return Err(Error::InvalidSize(format!(
                "expected {num_agents} block sizes, got {}",
                sizes.len()
            )));
        }
        if num_samples == 0 || sizes.contains(&0) {
            return Err(Error::InvalidSize("M and every P_i must be at least 1".into()));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidSize(format!("noise variance must be non-negative, got {noise_variance}")));
        }
        let p: usize = sizes.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || T::lit(rng.sample::<f64, _>(StandardNormal));
        let a = Array2::from_shape_simple_fn((num_samples, p), &mut normal);
        let omega = Array1::from_shape_simple_fn(p, &mut normal);
        let scale = T::lit(noise_variance.sqrt());
        let noise = Array1::from_shape_simple_fn(num_samples, || normal() * scale);
        let response = a.dot(&omega) + &noise;
        let mut fp = Self::partition_columns(a.view(), response, sizes)?;
        fp.truth = Some(omega);
        fp.seed = Some(seed);
        Ok(fp)
    }

    /// Splits `A` column-wise: block `i` takes the next `sizes[i]` columns.
    pub fn partition_columns(a: ArrayView2<T>, response: Array1<T>, sizes: &[usize]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if total != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "block sizes sum to {total} but A has {} columns",
                a.ncols()
            )));
        }
        let mut blocks = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &p in sizes {
            blocks.push(a.slice(s![.., start..start + p]).to_owned());
            start += p;
        }
        Self::new(blocks, response, None)
    }

    pub fn with_truth(mut self, truth: Array1<T>) -> Result<Self> {
        if truth.len() != self.total_features() {
            return Err(Error::DimensionMismatch(format!(
                "truth has length {} but the blocks hold {} features",
                truth.len(),
                self.total_features()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn num_agents(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_samples(&self) -> usize {
        self.response.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn total_features(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    /// Block of agent `agent` (1-based).
    pub fn block(&self, agent: usize) -> ArrayView2<'_, T> {
        self.blocks[agent - 1].view()
    }

    pub fn blocks(&self) -> &[Array2<T>] {
        &self.blocks
    }

    pub fn response(&self) -> ArrayView1<'_, T> {
        self.response.view()
    }

    pub fn truth(&self) -> Option<ArrayView1<'_, T>> {
        self.truth.as_ref().map(|t| t.view())
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// The full matrix `A = [A_1, …, A_N]`.
    pub fn assemble(&self) -> Array2<T> {
        let views: Vec<_> = self.blocks.iter().map(|blk| blk.view()).collect();
        concatenate(Axis(1), &views).expect("blocks share a row count")
    }

    /// Splits a stacked `P`-vector into per-agent slices.
    pub fn split_vector(&self, x: ArrayView1<T>) -> Result<Vec<Array1<T>>> {
        if x.len() != self.total_features() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} does not match {} features",
                x.len(),
                self.total_features()
            )));
        }
        let mut start = 0;
        Ok(self
            .sizes()
            .into_iter()
            .map(|p| {
                let part = x.slice(s![start..start + p]).to_owned();
                start += p;
                part
            })
            .collect())
    }

    /// Writes `block_001.csv …`, `b.csv`, optional `truth.csv` and `meta.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, block) in self.blocks.iter().enumerate() {
            write_matrix_csv(&dir.join(block_file_name(i + 1)), block.view())?;
        }
        write_vector_csv(&dir.join("b.csv"), self.response.view())?;
        if let Some(truth) = &self.truth {
            write_vector_csv(&dir.join("truth.csv"), truth.view())?;
        }
        let mut meta = String::new();
        let sizes: Vec<String> = self.sizes().iter().map(ToString::to_string).collect();
        let _ = writeln!(meta, "n = {}", self.num_agents());
        let _ = writeln!(meta, "m = {}", self.num_samples());
        let _ = writeln!(meta, "sizes = {}", sizes.join(","));
        if let Some(seed) = self.seed {
            let _ = writeln!(meta, "seed = {seed}");
        }
        let path = dir.join("meta.txt");
        fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.txt");
        let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta_name = meta_path.display().to_string();
        let (mut n, mut m, mut sizes, mut seed) = (None, None, None, None);
        for (idx, line) in meta.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::parse(&meta_name, Some(idx + 1), msg);
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("expected `key = value`, found `{line}`")))?;
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("`{v}` is not an integer")));
            match key {
                "n" => n = Some(int(value)?),
                "m" => m = Some(int(value)?),
                "sizes" => sizes = Some(value.split(',').map(|v| int(v.trim())).collect::<Result<Vec<_>>>()?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad(format!("`{value}` is not a seed")))?),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::parse(&meta_name, None, format!("missing `{k}`"));
        let n = n.ok_or_else(|| missing("n"))?;
        let m = m.ok_or_else(|| missing("m"))?;
        let sizes = sizes.ok_or_else(|| missing("sizes"))?;
        if sizes.len() != n {
            return Err(Error::DimensionMismatch(format!("meta lists {} sizes for {n} agents", sizes.len())));
        }
        let mut blocks = Vec::with_capacity(n);
        for (i, &p) in sizes.iter().enumerate() {
            let block = load_matrix_csv::<T>(&dir.join(block_file_name(i + 1)))?;
            if block.dim() != (m, p) {
                return Err(Error::DimensionMismatch(format!(
                    "block {} is {:?}, expected ({m}, {p})",
                    i + 1,
                    block.dim()
                )));
            }
            blocks.push(block);
        }
        let response = load_vector_csv(&dir.join("b.csv"))?;
        let truth_path = dir.join("truth.csv");
        let truth = if truth_path.exists() {
            Some(load_vector_csv(&truth_path)?)
        } else {
            None
        };
        let mut fp = Self::new(blocks, response, truth)?;
        fp.seed = seed;
        Ok(fp)
    }
}

fn block_file_name(agent: usize) -> String {
    format!("block_{agent:03}.csv")
}

/// Reads a headerless CSV of decimal values, one matrix row per line.
pub fn load_matrix_csv<T: Real>(path: &Path) -> Result<Array2<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, &path.display().to_string())
}

pub fn parse_matrix_csv<T: Real>(text: &str, source_name: &str) -> Result<Array2<T>> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<T> = line
            .split(',')
            .map(|field| {
                field.trim().parse::<T>().map_err(|_| {
                    Error::parse(source_name, Some(idx + 1), format!("`{}` is not a number", field.trim()))
                })
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(
                    source_name,
                    Some(idx + 1),
                    format!("ragged row: expected {c} fields, found {}", row.len()),
                ))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::parse(source_name, None, "empty matrix file"))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("shape checked row by row"))
}

pub fn load_vector_csv<T: Real>(path: &Path) -> Result<Array1<T>> {
    let m = load_matrix_csv::<T>(path)?;
    if m.ncols() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} holds {} columns, expected a single column",
            path.display(),
            m.ncols()
        )));
    }
    Ok(m.column(0).to_owned())
}

pub fn matrix_to_csv<T: Real>(m: ArrayView2<T>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(ToString::to_string).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv<T: Real>(path: &Path, m: ArrayView2<T>) -> Result<()> {
    fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}

/// Writes a vector as a single-column CSV.
pub fn write_vector_csv<T: Real>(path: &Path, v: ArrayView1<T>) -> Result<()> {
    write_matrix_csv(path, v.insert_axis(Axis(1)))
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    type Fp = FeaturePartition<f64>;

    #[test]
    fn noiseless_synthesis_is_exact() {
        let fp = Fp::synthesize(3, 20, &[2, 1, 3], 0.0, 5).unwrap();
        let a = fp.assemble();
        let residual = a.dot(&fp.truth().unwrap()) - &fp.response();
        assert_eq!(residual.iter().map(|x| x.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn experiment_sized_synthesis_shapes() {
        let fp = Fp::synthesize(10, 500, &[2; 10], 0.1, 1).unwrap();
        assert_eq!(fp.num_agents(), 10);
        assert!(fp.blocks().iter().all(|b| b.dim() == (500, 2)));
        assert_eq!(fp.response().len(), 500);
        assert_eq!(fp.truth().unwrap().len(), 20);
        assert_eq!(fp.seed(), Some(1));
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let a = Fp::synthesize(4, 30, &[2; 4], 0.1, 99).unwrap();
        let b = Fp::synthesize(4, 30, &[2; 4], 0.1, 99).unwrap();
        assert_eq!(a, b);
        let c = Fp::synthesize(4, 30, &[2; 4], 0.1, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthesis_validates_sizes() {
        assert!(Fp::synthesize(2, 10, &[1], 0.1, 0).is_err());
        assert!(Fp::synthesize(2, 0, &[1, 1], 0.1, 0).is_err());
        assert!(Fp::synthesize(2, 10, &[1, 0], 0.1, 0).is_err());
        assert!(Fp::synthesize(2, 10, &[1, 1], -1.0, 0).is_err());
    }

    #[test]
    fn noise_variance_smoke_test() {
        let v = 0.1;
        let fp = Fp::synthesize(1, 20_000, &[1], v, 17).unwrap();
        let resid = fp.assemble().dot(&fp.truth().unwrap()) - &fp.response();
        let mean = resid.mean().unwrap();
        let var = resid.mapv(|r| (r - mean).powi(2)).sum() / (resid.len() - 1) as f64;
        assert!((var - v).abs() <= 0.2 * v, "empirical variance {var}");
    }

    #[test]
    fn partition_examples() {
        let a = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let b = array![1.0, 2.0, 3.0];
        let fp = Fp::partition_columns(a.view(), b.clone(), &[2, 2]).unwrap();
        assert_eq!(fp.block(1), a.slice(s![.., 0..2]));
        assert_eq!(fp.block(2), a.slice(s![.., 2..4]));
        assert_eq!(fp.assemble(), a);

        let single = Fp::partition_columns(a.view(), b.clone(), &[4]).unwrap();
        assert_eq!(single.block(1), a.view());

        assert!(matches!(
            Fp::partition_columns(a.view(), b, &[3, 2]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn split_vector_matches_sizes() {
        let fp = Fp::synthesize(3, 5, &[1, 2, 3], 0.0, 0).unwrap();
        let parts = fp.split_vector(fp.truth().unwrap()).unwrap();
        assert_eq!(parts.iter().map(Array1::len).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(fp.split_vector(array![1.0].view()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let fp = Fp::synthesize(3, 12, &[2, 1, 2], 0.1, 8).unwrap();
        fp.save(dir.path()).unwrap();
        assert!(dir.path().join("block_001.csv").exists());
        assert!(dir.path().join("block_003.csv").exists());
        let back = Fp::load(dir.path()).unwrap();
        assert_eq!(back, fp);
    }

    #[test]
    fn csv_parse_errors() {
        assert!(matches!(parse_matrix_csv::<f64>("", "mem"), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_matrix_csv::<f64>("1,2\n3\n", "mem"),
            Err(Error::Parse { line: Some(2), .. })
        ));
        assert!(matches!(
            parse_matrix_csv::<f64>("1,abc\n", "mem"),
            Err(Error::Parse { line: Some(1), .. })
        ));
        let m = parse_matrix_csv::<f64>("1,2\n\n3,4\n", "mem").unwrap();
        assert_eq!(m, array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let fp = Fp::synthesize(2, 4, &[1, 1], 0.1, 1).unwrap();
        fp.save(dir.path()).unwrap();
        fs::write(dir.path().join("block_002.csv"), "1,2\n3,4\n5,6\n7,8\n").unwrap();
        assert!(matches!(Fp::load(dir.path()), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let fp = FeaturePartition::<f32>::synthesize(2, 10, &[1, 2], 0.0, 3).unwrap();
        let resid = fp.assemble().dot(&fp.truth().unwrap()) - &fp.response();
        assert_eq!(resid.iter().map(|x| x.abs()).sum::<f32>(), 0.0);
    }
}
