//! 2-D DCT-II basis planes, spectra, and the GAP/lowest-frequency identity.
//!
//! Basis entry `(i, j)` of frequency `(f, t)` on an `F×T` grid is
//! `cos(πf/F·(i+½))·cos(πt/T·(j+½))`. Spectra from [`dct2d`] use these planes
//! without normalization constants, so `SP[0,0] = F·T·mean(x)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrequencyIndex {
    pub f: usize,
    pub t: usize,
}

impl FrequencyIndex {
    pub const LOWEST: FrequencyIndex = FrequencyIndex { f: 0, t: 0 };

    pub fn new(f: usize, t: usize) -> Self {
        FrequencyIndex { f, t }
    }

    pub fn check_bounds(&self, rows: usize, cols: usize) -> Result<()> {
        if self.f >= rows || self.t >= cols {
            return Err(Error::Index(format!("frequency index {self} out of range for a {rows}x{cols} grid")));
        }
        Ok(())
    }
}

impl fmt::Display for FrequencyIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.f, self.t)
    }
}

fn cos_term(freq: usize, len: usize, pos: usize) -> f64 {
    (PI * freq as f64 / len as f64 * (pos as f64 + 0.5)).cos()
}

// cos_table[freq * len + pos]
fn cos_table(len: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(len * len);
    for freq in 0..len {
        for pos in 0..len {
            table.push(cos_term(freq, len, pos));
        }
    }
    table
}

/// Unnormalized basis plane for `idx` on a `rows×cols` grid.
pub fn basis_plane(rows: usize, cols: usize, idx: FrequencyIndex) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(Error::dim(format!("basis grid {rows}x{cols} is empty")));
    }
    idx.check_bounds(rows, cols)?;
    let col_terms: Vec<f64> = (0..cols).map(|j| cos_term(idx.t, cols, j)).collect();
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let a = cos_term(idx.f, rows, i);
        data.extend(col_terms.iter().map(|b| a * b));
    }
    Tensor::from_vec(&[rows, cols], data)
}

/// A fixed list of basis planes for one feature-map size.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    rows: usize,
    cols: usize,
    indices: Vec<FrequencyIndex>,
    planes: Vec<Tensor>,
    normalized: bool,
}

type CacheKey = (usize, usize, Vec<FrequencyIndex>, bool);

fn basis_cache() -> &'static Mutex<HashMap<CacheKey, Arc<DctBasis>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<DctBasis>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

impl DctBasis {
    /// With `normalized`, every plane is divided by `F·T` so the `(0,0)` plane
    /// computes the plain mean.
    pub fn new(rows: usize, cols: usize, indices: &[FrequencyIndex], normalized: bool) -> Result<Self> {
        let scale = if normalized { 1.0 / (rows * cols) as f64 } else { 1.0 };
        let planes = indices
            .iter()
            .map(|&idx| {
                let p = basis_plane(rows, cols, idx)?;
                Ok(if normalized { crate::tensor::scale(&p, scale) } else { p })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DctBasis { rows, cols, indices: indices.to_vec(), planes, normalized })
    }

    /// Shared instance keyed by `(F, T, indices, normalized)`.
    pub fn cached(rows: usize, cols: usize, indices: &[FrequencyIndex], normalized: bool) -> Result<Arc<Self>> {
        let key = (rows, cols, indices.to_vec(), normalized);
        if let Some(b) = basis_cache().lock().expect("dct cache poisoned").get(&key) {
            return Ok(Arc::clone(b));
        }
        // Built outside the lock; a racing insert of an identical basis is harmless.
        let basis = Arc::new(DctBasis::new(rows, cols, indices, normalized)?);
        let mut cache = basis_cache().lock().expect("dct cache poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(basis)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[FrequencyIndex] {
        &self.indices
    }

    pub fn planes(&self) -> &[Tensor] {
        &self.planes
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// `Σ_{i,j} plane_n[i,j]·x[i,j]` for a flat `F·T` slice.
    pub fn project(&self, n: usize, plane: &[f64]) -> f64 {
        self.planes[n].data().iter().zip(plane).map(|(d, v)| d * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Tensor,
}

impl Spectrum {
    pub fn get(&self, idx: FrequencyIndex) -> f64 {
        let cols = self.values.shape()[1];
        self.values.data()[idx.f * cols + idx.t]
    }
}

// out = A·X·Bᵀ with A = row table scaled by row_w, B = col table scaled by col_w.
fn separable(x: &Tensor, row_w: &dyn Fn(usize) -> f64, col_w: &dyn Fn(usize) -> f64, inverse: bool) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    let rt = cos_table(rows);
    let ct = cos_table(cols);
    let xd = x.data();
    // Forward: SP[f,t] = Σ_i Σ_j x[i,j] c_r(f,i) c_c(t,j).
    // Inverse: x[i,j] = Σ_f Σ_t SP[f,t] c_r(f,i) c_c(t,j).
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for q in 0..cols {
            let mut acc = 0.0;
            for s in 0..cols {
                let c = if inverse { ct[s * cols + q] * col_w(s) } else { ct[q * cols + s] * col_w(q) };
                acc += xd[r * cols + s] * c;
            }
            tmp[r * cols + q] = acc;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for p in 0..rows {
        for q in 0..cols {
            let mut acc = 0.0;
            for r in 0..rows {
                let c = if inverse { rt[r * rows + p] * row_w(r) } else { rt[p * rows + r] * row_w(p) };
                acc += tmp[r * cols + q] * c;
            }
            out[p * cols + q] = acc;
        }
    }
    Tensor::from_vec(&[rows, cols], out)
}

/// Unnormalized 2-D DCT-II of an `F×T` plane.
pub fn dct2d(x: &Tensor) -> Result<Spectrum> {
    Ok(Spectrum { values: separable(x, &|_| 1.0, &|_| 1.0, false)? })
}

fn ortho_weight(len: usize) -> impl Fn(usize) -> f64 {
    move |k| if k == 0 { (1.0 / len as f64).sqrt() } else { (2.0 / len as f64).sqrt() }
}

/// Orthonormal 2-D DCT-II; the inverse of [`idct2d`].
pub fn dct2d_orthonormal(x: &Tensor) -> Result<Spectrum> {
    let (rows, cols) = x.dims2()?;
    Ok(Spectrum { values: separable(x, &ortho_weight(rows), &ortho_weight(cols), false)? })
}

/// Reconstructs a plane from an orthonormal spectrum as a weighted sum of
/// basis planes.
pub fn idct2d(sp: &Spectrum) -> Result<Tensor> {
    let (rows, cols) = sp.values.dims2()?;
    separable(&sp.values, &ortho_weight(rows), &ortho_weight(cols), true)
}

/// Per-channel mean over the two trailing axes of `x[C×F×T]`.
pub fn gap(x: &Tensor) -> Result<Tensor> {
    let (c, f, t) = x.dims3()?;
    let plane = f * t;
    let z = x.data().chunks(plane).map(|ch| ch.iter().sum::<f64>() / plane as f64).collect();
    debug_assert_eq!(x.len() / plane, c);
    Tensor::from_vec(&[c], z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionStrategy {
    /// Ascending `f + t`, ties by smaller `f`, then smaller `t`.
    #[default]
    ZigzagLowFirst,
}

pub fn select_frequency_indices(
    rows: usize,
    cols: usize,
    k: usize,
    strategy: SelectionStrategy,
) -> Result<Vec<FrequencyIndex>> {
    if k > rows * cols {
        return Err(Error::Capacity(format!(
            "{k} frequency components requested but a {rows}x{cols} grid only has {}",
            rows * cols
        )));
    }
    match strategy {
        SelectionStrategy::ZigzagLowFirst => {
            let mut all: Vec<FrequencyIndex> =
                (0..rows).flat_map(|f| (0..cols).map(move |t| FrequencyIndex::new(f, t))).collect();
            all.sort_by_key(|i| (i.f + i.t, i.f, i.t));
            all.truncate(k);
            Ok(all)
        }
    }
}

/// Outcome of one named DCT property.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub type PlaneFn<'a> = &'a dyn Fn(usize, usize, FrequencyIndex) -> Result<Tensor>;

/// Runs the DCT property suite on grids up to `max_grid × max_grid`, taking
/// basis planes from `plane_fn` so a perturbed basis can be substituted.
pub fn verify_properties(plane_fn: PlaneFn<'_>, max_grid: usize, seed: u64) -> Result<Vec<PropertyResult>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();

    // Orthogonality: distinct planes have zero inner product.
    let mut worst = 0.0_f64;
    for rows in 1..=max_grid {
        for cols in 1..=max_grid {
            let planes = all_planes(plane_fn, rows, cols)?;
            for a in 0..planes.len() {
                for b in a + 1..planes.len() {
                    worst = worst.max(planes[a].dot(&planes[b])?.abs());
                }
            }
        }
    }
    results.push(PropertyResult {
        name: "orthogonality",
        passed: worst < 1e-9,
        detail: format!("max |<D_a, D_b>| = {worst:.3e}"),
    });

    // GAP equivalence: brute-force SP[0,0] against F·T·mean.
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let rows = rand::Rng::random_range(&mut rng, 1..=max_grid);
        let cols = rand::Rng::random_range(&mut rng, 1..=max_grid);
        let x = Tensor::randn(&[1, rows, cols], &mut rng);
        let lowest = plane_fn(rows, cols, FrequencyIndex::LOWEST)?;
        let sp00 = lowest.dot(&x.reshape(&[rows, cols])?)?;
        let g = gap(&x)?.data()[0];
        worst = worst.max((sp00 - (rows * cols) as f64 * g).abs());
    }
    results.push(PropertyResult {
        name: "gap_equivalence",
        passed: worst < 1e-9,
        detail: format!("max |SP00 - F*T*gap| = {worst:.3e}"),
    });

    // Orthonormal round trip built from the supplied planes.
    let mut worst = 0.0_f64;
    for rows in 1..=max_grid {
        for cols in 1..=max_grid {
            let planes = all_planes(plane_fn, rows, cols)?;
            let x = Tensor::randn(&[rows, cols], &mut rng);
            let mut recon = vec![0.0; rows * cols];
            for (n, p) in planes.iter().enumerate() {
                let (f, t) = (n / cols, n % cols);
                let w = ortho_weight(rows)(f) * ortho_weight(cols)(t);
                let coeff = w * p.dot(&x)?;
                for (r, d) in recon.iter_mut().zip(p.data()) {
                    *r += coeff * w * d;
                }
            }
            let recon = Tensor::from_vec(&[rows, cols], recon)?;
            worst = worst.max(recon.max_abs_diff(&x)?);
        }
    }
    results.push(PropertyResult {
        name: "round_trip",
        passed: worst < 1e-10,
        detail: format!("max reconstruction error = {worst:.3e}"),
    });

    // Normalized (0,0) plane reproduces gap.
    let mut worst = 0.0_f64;
    for rows in 1..=max_grid {
        for cols in 1..=max_grid {
            let x = Tensor::randn(&[1, rows, cols], &mut rng);
            let p = plane_fn(rows, cols, FrequencyIndex::LOWEST)?;
            let normalized = crate::tensor::scale(&p, 1.0 / (rows * cols) as f64);
            let z = normalized.dot(&x.reshape(&[rows, cols])?)?;
            worst = worst.max((z - gap(&x)?.data()[0]).abs());
        }
    }
    results.push(PropertyResult {
        name: "normalized_gap",
        passed: worst < 1e-12,
        detail: format!("max |<D00/FT, x> - gap| = {worst:.3e}"),
    });

    // Determinism: regenerated planes are bitwise identical.
    let mut identical = true;
    for rows in 1..=max_grid {
        for cols in 1..=max_grid {
            identical &= all_planes(plane_fn, rows, cols)? == all_planes(plane_fn, rows, cols)?;
        }
    }
    results.push(PropertyResult {
        name: "determinism",
        passed: identical,
        detail: if identical { "bitwise identical".into() } else { "planes differ between runs".into() },
    });

    Ok(results)
}

fn all_planes(plane_fn: PlaneFn<'_>, rows: usize, cols: usize) -> Result<Vec<Tensor>> {
    (0..rows).flat_map(|f| (0..cols).map(move |t| FrequencyIndex::new(f, t))).map(|i| plane_fn(rows, cols, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Literal double sum over the basis plane, independent of the separable path.
    fn brute_dct(x: &Tensor) -> Tensor {
        let (rows, cols) = x.dims2().unwrap();
        let mut out = vec![0.0; rows * cols];
        for f in 0..rows {
            for t in 0..cols {
                let mut acc = 0.0;
                for i in 0..rows {
                    for j in 0..cols {
                        acc += x.data()[i * cols + j]
                            * (PI * f as f64 / rows as f64 * (i as f64 + 0.5)).cos()
                            * (PI * t as f64 / cols as f64 * (j as f64 + 0.5)).cos();
                    }
                }
                out[f * cols + t] = acc;
            }
        }
        Tensor::from_vec(&[rows, cols], out).unwrap()
    }

    #[test]
    fn basis_plane_examples() {
        assert_eq!(basis_plane(4, 4, FrequencyIndex::new(0, 0)).unwrap(), Tensor::full(&[4, 4], 1.0));
        let p = basis_plane(2, 1, FrequencyIndex::new(1, 0)).unwrap();
        assert!((p.data()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((p.data()[1] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        for f in 0..5 {
            for t in 0..5 {
                let a = basis_plane(5, 5, FrequencyIndex::new(f, t)).unwrap();
                let b = basis_plane(5, 5, FrequencyIndex::new(t, f)).unwrap();
                for i in 0..5 {
                    for j in 0..5 {
                        assert_eq!(a.data()[i * 5 + j], b.data()[j * 5 + i]);
                    }
                }
            }
        }
        assert!(matches!(basis_plane(4, 4, FrequencyIndex::new(4, 0)), Err(Error::Index(_))));
    }

    #[test]
    fn dct2d_examples() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((dct2d(&x).unwrap().get(FrequencyIndex::LOWEST) - 10.0).abs() < 1e-12);

        let c = Tensor::full(&[3, 5], 2.5);
        let sp = dct2d(&c).unwrap();
        for f in 0..3 {
            for t in 0..5 {
                if (f, t) != (0, 0) {
                    assert!(sp.get(FrequencyIndex::new(f, t)).abs() < 1e-12);
                }
            }
        }
        assert_eq!(dct2d(&Tensor::zeros(&[4, 3])).unwrap().values.sum(), 0.0);
    }

    #[test]
    fn dct2d_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (r, c) in [(1, 1), (2, 3), (4, 6), (7, 5), (8, 8)] {
            let x = Tensor::randn(&[r, c], &mut rng);
            assert!(dct2d(&x).unwrap().values.max_abs_diff(&brute_dct(&x)).unwrap() < 1e-11);
        }
    }

    #[test]
    fn idct_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::randn(&[4, 6], &mut rng);
        let back = idct2d(&dct2d_orthonormal(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-10);

        let zero = Spectrum { values: Tensor::zeros(&[3, 4]) };
        assert_eq!(idct2d(&zero).unwrap(), Tensor::zeros(&[3, 4]));

        let mut v = vec![0.0; 12];
        v[0] = 3.0;
        let recon = idct2d(&Spectrum { values: Tensor::from_vec(&[3, 4], v).unwrap() }).unwrap();
        let first = recon.data()[0];
        assert!(recon.data().iter().all(|&r| (r - first).abs() < 1e-12));
        assert!((first - 3.0 / 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(gap(&Tensor::full(&[3, 2, 2], 3.0)).unwrap().data(), &[3.0, 3.0, 3.0]);
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn gap_equivalence_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let (c, f, t) = (
                rand::Rng::random_range(&mut rng, 1..=8),
                rand::Rng::random_range(&mut rng, 1..=16),
                rand::Rng::random_range(&mut rng, 1..=20),
            );
            let x = Tensor::randn(&[c, f, t], &mut rng);
            let g = gap(&x).unwrap();
            for ch in 0..c {
                let sp = dct2d(&x.channel(ch).unwrap()).unwrap();
                assert!((sp.get(FrequencyIndex::LOWEST) - (f * t) as f64 * g.data()[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn orthogonality_brute_force() {
        for r in 1..=8 {
            for c in 1..=8 {
                let planes: Vec<Tensor> = (0..r * c)
                    .map(|n| basis_plane(r, c, FrequencyIndex::new(n / c, n % c)).unwrap())
                    .collect();
                for a in 0..planes.len() {
                    for b in a + 1..planes.len() {
                        assert!(planes[a].dot(&planes[b]).unwrap().abs() < 1e-9, "{r}x{c} planes {a},{b}");
                    }
                }
            }
        }
    }

    #[test]
    fn normalized_basis_reproduces_gap() {
        let basis = DctBasis::new(3, 7, &[FrequencyIndex::LOWEST], true).unwrap();
        assert!(basis.planes()[0].data().iter().all(|&v| v == 1.0 / 21.0));
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Tensor::randn(&[1, 3, 7], &mut rng);
        assert!((basis.project(0, x.data()) - gap(&x).unwrap().data()[0]).abs() < 1e-15);
    }

    #[test]
    fn cache_returns_identical_basis() {
        let idx = select_frequency_indices(6, 6, 5, SelectionStrategy::ZigzagLowFirst).unwrap();
        let a = DctBasis::cached(6, 6, &idx, true).unwrap();
        let b = DctBasis::cached(6, 6, &idx, true).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, DctBasis::new(6, 6, &idx, true).unwrap());
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let idx = idx.clone();
                std::thread::spawn(move || DctBasis::cached(9, 4, &idx, false).unwrap())
            })
            .collect();
        let got: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(got.windows(2).all(|w| *w[0] == *w[1]));
    }

    #[test]
    fn zigzag_selection() {
        use SelectionStrategy::ZigzagLowFirst as Z;
        let fi = FrequencyIndex::new;
        assert_eq!(select_frequency_indices(8, 8, 1, Z).unwrap(), vec![fi(0, 0)]);
        // f+t ranks: (0,0) | (0,1) (1,0) | (0,2) ...
        assert_eq!(select_frequency_indices(8, 8, 4, Z).unwrap(), vec![fi(0, 0), fi(0, 1), fi(1, 0), fi(0, 2)]);
        let mut all = select_frequency_indices(2, 2, 4, Z).unwrap();
        all.sort();
        assert_eq!(all, vec![fi(0, 0), fi(0, 1), fi(1, 0), fi(1, 1)]);
        assert!(matches!(select_frequency_indices(2, 2, 5, Z), Err(Error::Capacity(_))));
    }

    #[test]
    fn property_suite_passes_and_detects_perturbation() {
        let ok = verify_properties(&basis_plane, 8, 1).unwrap();
        assert!(ok.iter().all(|p| p.passed), "{ok:?}");
        let perturbed = |r: usize, c: usize, idx: FrequencyIndex| {
            let p = basis_plane(r, c, idx)?;
            if idx == FrequencyIndex::new(0, 1) {
                let mut v = p.into_vec();
                v[0] += 1e-3;
                return Tensor::from_vec(&[r, c], v);
            }
            Ok(p)
        };
        let bad = verify_properties(&perturbed, 8, 1).unwrap();
        assert!(!bad.iter().find(|p| p.name == "orthogonality").unwrap().passed);
    }
}
