//! Seeded synthetic scenarios: Wishart metrics, uniformly random subspaces,
//! Gaussian users and items (optionally off-subspace), logistic responses,
//! and SVD denoising of approximate subspace data.
//!
//! Every generator is a pure function of its arguments and a `u64` seed.
//! Sub-seeds come from [`derive_seed`], a SplitMix64 mix of
//! `(parent, role, index)`; each stream is a ChaCha8 generator.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::model::{psi, Label, Measurement, QuantizedMeasurement};
use crate::quantized::{SolverConfig, SubspaceProblem};
use crate::subspace::Subspace;
use crate::sym::SymMatrix;

/// Stream roles mixed into derived seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Run = 1,
    Metric = 2,
    Subspace = 3,
    Users = 4,
    Items = 5,
    Responses = 6,
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(parent ⊕ splitmix64(role ⊕ splitmix64(index)))`.
pub fn derive_seed(parent: u64, role: Role, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(role as u64 ^ splitmix64(index)))
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `GGᵀ` with `G` a `d × d` standard Gaussian matrix.
pub fn wishart(d: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| normal(rng));
    SymMatrix::from_matrix(&(&g * g.transpose())).expect("square")
}

/// Wishart draw normalized to `‖M‖_F = d`.
pub fn gen_metric(d: usize, seed: u64) -> Result<SymMatrix> {
    if d == 0 {
        return Err(Error::InvalidParameter("d must be at least 1"));
    }
    let m = wishart(d, &mut stream(seed));
    let scale = m.frobenius_norm() / d as f64;
    let packed = m.packed().iter().map(|v| v / scale).collect();
    SymMatrix::from_packed(d, packed)
}

/// Orthonormalized `d × r` draw with `N(0, 1/d)` entries; redrawn if the QR
/// factor is numerically singular.
pub fn gen_subspace(d: usize, r: usize, seed: u64) -> Result<Subspace> {
    if r == 0 || r > d {
        return Err(Error::InvalidParameter(
            "subspace dimension must satisfy 1 <= r <= d",
        ));
    }
    let mut rng = stream(seed);
    let sd = 1.0 / libm::sqrt(d as f64);
    loop {
        let g = DMatrix::from_fn(d, r, |_, _| normal(&mut rng) * sd);
        let qr = g.qr();
        if qr.r().diagonal().iter().all(|v| v.abs() > 1e-12) {
            return Subspace::new(qr.q().columns(0, r).into_owned());
        }
    }
}

/// `K` i.i.d. ideal points from `N(0, I/d)`.
pub fn gen_users(d: usize, k: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = stream(seed);
    let sd = 1.0 / libm::sqrt(d as f64);
    (0..k)
        .map(|_| DVector::from_fn(d, |_, _| normal(&mut rng) * sd))
        .collect()
}

/// Items from `N(0, BBᵀ/r + σ²/(d-r)·(I - BBᵀ))`.
///
/// When `r < d` the off-subspace draw is made even for `σ = 0`, so item
/// streams line up across noise levels.
pub fn gen_items(v: &Subspace, count: usize, sigma: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    let (d, r) = (v.ambient_dim(), v.dim());
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(
            "sigma must be finite and non-negative",
        ));
    }
    if sigma > 0.0 && r == d {
        return Err(Error::InvalidParameter("sigma > 0 requires r < d"));
    }
    let b = v.basis();
    let mut rng = stream(seed);
    let in_scale = 1.0 / libm::sqrt(r as f64);
    let out_scale = if r < d {
        sigma / libm::sqrt((d - r) as f64)
    } else {
        0.0
    };
    Ok((0..count)
        .map(|_| {
            let g1 = DVector::from_fn(r, |_, _| normal(&mut rng) * in_scale);
            let mut x = b * g1;
            if r < d {
                let g2 = DVector::from_fn(d, |_, _| normal(&mut rng));
                if sigma > 0.0 {
                    let off = &g2 - b * (b.transpose() * &g2);
                    x.axpy(out_scale, &off, 1.0);
                }
            }
            x
        })
        .collect())
}

/// `y = +1` with probability `1/(1 + exp(-βψ))`. For infinite `β` the label
/// is the sign of `ψ` with ties going to `+1`. One uniform is consumed either way.
pub fn gen_response(psi_value: f64, beta: f64, rng: &mut ChaCha8Rng) -> Label {
    let u: f64 = rng.random();
    let pos = if beta == f64::INFINITY {
        psi_value >= 0.0
    } else if beta == 0.0 {
        u < 0.5
    } else {
        u < crate::quantized::loss::sigmoid(beta * psi_value)
    };
    if pos {
        Label::Pos
    } else {
        Label::Neg
    }
}

/// Rank-`r` SVD fit of a group of items.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    /// Top-`r` left singular vectors, each signed so its largest-magnitude entry is positive.
    pub subspace: Subspace,
    /// Canonical coordinates `B̂ᵀx`.
    pub coords: Vec<DVector<f64>>,
    /// `σ_r / σ_{r+1} < 1 + 1e-12`: the top-`r` subspace is not well defined.
    pub ambiguous: bool,
    /// Descending.
    pub singular_values: Vec<f64>,
}

impl Denoised {
    /// Projections `B̂B̂ᵀx` in ambient coordinates.
    pub fn projected(&self) -> Vec<DVector<f64>> {
        self.coords
            .iter()
            .map(|c| self.subspace.basis() * c)
            .collect()
    }
}

pub fn svd_denoise(items: &[DVector<f64>], r: usize) -> Result<Denoised> {
    let n = items.len();
    let d = items.first().ok_or(Error::Empty("items"))?.len();
    if r == 0 || r > d {
        return Err(Error::InvalidParameter(
            "subspace dimension must satisfy 1 <= r <= d",
        ));
    }
    if n < r {
        return Err(Error::InvalidParameter("need at least r items"));
    }
    let mut x = DMatrix::zeros(d, n);
    for (j, item) in items.iter().enumerate() {
        crate::error::check_dim(d, item.len())?;
        x.set_column(j, item);
    }
    let svd = x.svd(true, false);
    let u = svd.u.as_ref().ok_or(Error::Singular)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let mut basis = DMatrix::zeros(d, r);
    for (col, &i) in order.iter().take(r).enumerate() {
        let mut v = u.column(i).into_owned();
        let pivot = v.iter().copied().fold(
            0.0f64,
            |best, e| if e.abs() > best.abs() { e } else { best },
        );
        if pivot < 0.0 {
            v.neg_mut();
        }
        basis.set_column(col, &v);
    }
    let subspace = Subspace::new(basis)?;
    let ambiguous = singular_values.len() > r
        && !(singular_values[r - 1] >= (1.0 + 1e-12) * singular_values[r]);
    let coords = items
        .iter()
        .map(|x| subspace.canonical(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(Denoised {
        subspace,
        coords,
        ambiguous,
        singular_values,
    })
}

/// Principal angles between two subspaces of the same ambient space,
/// ascending, `min(r₁, r₂)` of them. Accurate for small angles.
pub fn principal_angles(v: &Subspace, w: &Subspace) -> Result<Vec<f64>> {
    crate::error::check_dim(v.ambient_dim(), w.ambient_dim())?;
    let (big, small) = if v.dim() >= w.dim() { (v, w) } else { (w, v) };
    let (b1, b2) = (big.basis(), small.basis());
    let cross = b1.transpose() * b2;
    let mut cos: Vec<f64> = cross.singular_values().iter().copied().collect();
    cos.sort_by(|a, b| b.total_cmp(a));
    let residual = b2 - b1 * &cross;
    let mut sin: Vec<f64> = residual.singular_values().iter().copied().collect();
    sin.sort_by(f64::total_cmp);
    Ok(cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| libm::atan2(s, c))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub d: usize,
    pub r: usize,
    pub n_subspaces: usize,
    pub users_per_subspace: usize,
    pub comparisons_per_user: usize,
    /// Link sharpness; `f64::INFINITY` for noiseless labels.
    pub beta_data: f64,
    /// Off-subspace item noise level in `[0, 1]`.
    pub sigma: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.r == 0 || self.r > self.d {
            return Err(Error::InvalidParameter("need 1 <= r <= d"));
        }
        if self.n_subspaces == 0 || self.users_per_subspace == 0 || self.comparisons_per_user == 0 {
            return Err(Error::InvalidParameter("counts must be at least 1"));
        }
        if !(self.beta_data >= 0.0) {
            return Err(Error::InvalidParameter("beta_data must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::InvalidParameter("sigma must lie in [0, 1]"));
        }
        if self.sigma > 0.0 && self.r == self.d {
            return Err(Error::InvalidParameter("sigma > 0 requires r < d"));
        }
        Ok(())
    }
}

/// Learning inputs for one subspace after SVD denoising.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedGroup {
    pub subspace: Subspace,
    /// Measurements with items replaced by their projections onto `subspace`;
    /// labels are those generated from the raw items.
    pub users: Vec<Vec<QuantizedMeasurement>>,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub metric: SymMatrix,
    pub subspaces: Vec<Subspace>,
    /// Ideal points per subspace.
    pub users: Vec<Vec<DVector<f64>>>,
    /// Raw items with their labels, per subspace and user.
    pub datasets: Vec<Vec<Vec<QuantizedMeasurement>>>,
    /// Present exactly when `sigma > 0`.
    pub denoised: Option<Vec<DenoisedGroup>>,
}

/// Sub-streams: the metric, each subspace `λ`, the users of `λ`, and items
/// and responses per `(λ, k)`. Users and items are drawn sequentially, so
/// growing `K` or `m` extends the data without changing the existing prefix.
pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let metric = gen_metric(cfg.d, derive_seed(cfg.seed, Role::Metric, 0))?;
    let m = cfg.comparisons_per_user;
    let mut subspaces = Vec::with_capacity(cfg.n_subspaces);
    let mut users = Vec::with_capacity(cfg.n_subspaces);
    let mut datasets = Vec::with_capacity(cfg.n_subspaces);
    for lambda in 0..cfg.n_subspaces as u64 {
        let v = gen_subspace(cfg.d, cfg.r, derive_seed(cfg.seed, Role::Subspace, lambda))?;
        let ideal = gen_users(
            cfg.d,
            cfg.users_per_subspace,
            derive_seed(cfg.seed, Role::Users, lambda),
        );
        let item_parent = derive_seed(cfg.seed, Role::Items, lambda);
        let response_parent = derive_seed(cfg.seed, Role::Responses, lambda);
        let per_user = ideal
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let items = gen_items(
                    &v,
                    2 * m,
                    cfg.sigma,
                    derive_seed(item_parent, Role::Items, k as u64),
                )?;
                let mut rng = stream(derive_seed(response_parent, Role::Responses, k as u64));
                items
                    .chunks_exact(2)
                    .map(|pair| {
                        let value = psi(&metric, &pair[0], &pair[1], u)?;
                        let label = gen_response(value, cfg.beta_data, &mut rng);
                        Ok(Measurement::new(pair[0].clone(), pair[1].clone(), label))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        subspaces.push(v);
        users.push(ideal);
        datasets.push(per_user);
    }

    let denoised = if cfg.sigma > 0.0 {
        Some(
            datasets
                .iter()
                .map(|per_user| denoise_group(per_user, cfg.r))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    Ok(Scenario {
        config: *cfg,
        metric,
        subspaces,
        users,
        datasets,
        denoised,
    })
}

fn denoise_group(per_user: &[Vec<QuantizedMeasurement>], r: usize) -> Result<DenoisedGroup> {
    let items: Vec<DVector<f64>> = per_user
        .iter()
        .flatten()
        .flat_map(|m| [m.item_a.clone(), m.item_b.clone()])
        .collect();
    let fit = svd_denoise(&items, r)?;
    let mut projected = fit.projected().into_iter();
    let users = per_user
        .iter()
        .map(|ms| {
            ms.iter()
                .map(|m| {
                    Measurement::new(
                        projected.next().unwrap(),
                        projected.next().unwrap(),
                        m.response,
                    )
                })
                .collect()
        })
        .collect();
    Ok(DenoisedGroup {
        subspace: fit.subspace,
        users,
        ambiguous: fit.ambiguous,
    })
}

impl Scenario {
    /// Reassembles a stored scenario, checking shapes against `config` and
    /// recomputing the denoised groups.
    pub fn from_parts(
        config: ScenarioConfig,
        metric: SymMatrix,
        subspaces: Vec<Subspace>,
        users: Vec<Vec<DVector<f64>>>,
        datasets: Vec<Vec<Vec<QuantizedMeasurement>>>,
    ) -> Result<Scenario> {
        config.validate()?;
        let d = config.d;
        check_dim(d, metric.dim())?;
        check_dim(config.n_subspaces, subspaces.len())?;
        check_dim(config.n_subspaces, users.len())?;
        check_dim(config.n_subspaces, datasets.len())?;
        for ((v, ideal), per_user) in subspaces.iter().zip(&users).zip(&datasets) {
            check_dim(d, v.ambient_dim())?;
            check_dim(config.r, v.dim())?;
            check_dim(config.users_per_subspace, ideal.len())?;
            check_dim(config.users_per_subspace, per_user.len())?;
            for u in ideal {
                check_dim(d, u.len())?;
            }
            for ms in per_user {
                check_dim(config.comparisons_per_user, ms.len())?;
                for m in ms {
                    check_dim(d, m.item_a.len())?;
                    check_dim(d, m.item_b.len())?;
                }
            }
        }
        let denoised = if config.sigma > 0.0 {
            Some(
                datasets
                    .iter()
                    .map(|per_user| denoise_group(per_user, config.r))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Scenario {
            config,
            metric,
            subspaces,
            users,
            datasets,
            denoised,
        })
    }

    /// The subspace and data the learner sees for subspace `lambda`.
    pub fn learning_data(&self, lambda: usize) -> (&Subspace, &[Vec<QuantizedMeasurement>]) {
        match &self.denoised {
            Some(groups) => (&groups[lambda].subspace, &groups[lambda].users),
            None => (&self.subspaces[lambda], &self.datasets[lambda]),
        }
    }

    /// Oracle constraint radii on each learning subspace `V̂`:
    /// `ζ_M = ‖B̂ᵀMB̂‖_F` and `ζ_v = max_k ‖B̂ᵀ(-2Mu_k)‖`, floored at `1e-12`.
    pub fn oracle_bounds(&self) -> Result<Vec<(f64, f64)>> {
        (0..self.subspaces.len())
            .map(|lambda| {
                let (v, _) = self.learning_data(lambda);
                let b = v.basis();
                let md = self.metric.to_matrix();
                let zeta_m = (b.transpose() * &md * b).norm();
                let zeta_v = self.users[lambda]
                    .iter()
                    .map(|u| (b.transpose() * (&md * u * -2.0)).norm())
                    .fold(0.0, f64::max);
                Ok((zeta_m.max(1e-12), zeta_v.max(1e-12)))
            })
            .collect()
    }

    /// Stage-1 problems with oracle radii; other solver settings come from `template`.
    pub fn problems(&self, template: &SolverConfig) -> Result<Vec<SubspaceProblem>> {
        let bounds = self.oracle_bounds()?;
        bounds
            .into_iter()
            .enumerate()
            .map(|(lambda, (zeta_m, zeta_v))| {
                let (v, users) = self.learning_data(lambda);
                let mut config = *template;
                config.zeta_m = zeta_m;
                config.zeta_v = zeta_v;
                config.validate()?;
                Ok(SubspaceProblem {
                    subspace: v.clone(),
                    users: users.to_vec(),
                    config,
                })
            })
            .collect()
    }

    /// Mean principal angle between each true subspace and its learning subspace.
    pub fn mean_principal_angle(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for lambda in 0..self.subspaces.len() {
            for angle in principal_angles(&self.subspaces[lambda], self.learning_data(lambda).0)? {
                total += angle;
                count += 1;
            }
        }
        Ok(total / count as f64)
    }
}
