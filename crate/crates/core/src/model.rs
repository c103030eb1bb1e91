//! Structured Hamiltonian neural ODE.
//!
//! `M = (L̄ + L̃(q))(L̄ + L̃(q))ᵀ`, `D = (Λ̄ + Λ̃(q))(Λ̄ + Λ̃(q))ᵀ`,
//! `g = ḡ + g̃(q)`, `V = V̄ + Ṽ(q)`, with each tilde term a small MLP on the
//! 12-vector of generalized coordinates. The dynamics are
//!
//! ```text
//! q̇ = q× ζ
//! ṗ = −q×ᵀ ∂H/∂q + p× ζ − D ζ + g u,     ζ = ∂H/∂p = M⁻¹ p
//! ```
//!
//! and `∂H/∂q` is taken by differentiating the recorded Hamiltonian.

use std::rc::Rc;

use nalgebra::{Matrix6, SMatrix, SVector, SymmetricEigen, Vector2, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, SparseMap, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{GeneralizedCoord, Twist, Vector12};

pub type Matrix6x2 = SMatrix<f64, 6, 2>;
pub type Vector18 = SVector<f64, 18>;
pub type Matrix18 = SMatrix<f64, 18, 18>;

/// Added to `M` before inversion.
pub const MASS_FLOOR: f64 = 1e-6;
/// `hamiltonian` and `vector_field` refuse mass matrices below this eigenvalue.
pub const MIN_MASS_EIGENVALUE: f64 = 1e-9;

/// Fixed nominal terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Nominal {
    /// Lower-triangular factor of the nominal mass matrix.
    pub mass_factor: Matrix6<f64>,
    /// Lower-triangular factor of the nominal dissipation matrix.
    pub damping_factor: Matrix6<f64>,
    pub gain: Matrix6x2,
    pub potential: f64,
}

/// Physical parameters of a differential-drive robot, as used for nominal
/// models and the ground-truth simulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    pub mass: f64,
    /// Diagonal of `ΓΓᵀ`.
    pub inertia: f64,
    pub wheel_radius: f64,
    pub track_width: f64,
    pub wheel_inertia: f64,
    pub time_constant: f64,
}

impl RobotParams {
    pub fn jackal() -> Self {
        Self {
            mass: 16.0,
            inertia: 0.4,
            wheel_radius: 0.098,
            track_width: 0.31,
            wheel_inertia: 4.58e-2,
            time_constant: 0.147,
        }
    }
}

impl Nominal {
    /// `M0 = I`, `D0 = 1e-3 I`, `V0 = 0`, `g0` mapping wheel torques to
    /// forward force (sum) and yaw torque (difference).
    pub fn unit() -> Self {
        let mut gain = Matrix6x2::zeros();
        gain[(0, 0)] = 1.0;
        gain[(0, 1)] = 1.0;
        gain[(5, 0)] = -1.0;
        gain[(5, 1)] = 1.0;
        Self {
            mass_factor: Matrix6::identity(),
            damping_factor: Matrix6::identity() * 1e-3f64.sqrt(),
            gain,
            potential: 0.0,
        }
    }

    /// Block-diagonal `L̄ = diag(√m I, Γ)`, `Λ̄ = λ I`, and the first-order
    /// wheel-velocity gain `η/(α r) [1 .. ∓w/2]`.
    pub fn differential_drive(p: &RobotParams, damping: f64) -> Self {
        let mut mass_factor = Matrix6::zeros();
        for i in 0..3 {
            mass_factor[(i, i)] = p.mass.sqrt();
            mass_factor[(i + 3, i + 3)] = p.inertia.sqrt();
        }
        let k = p.wheel_inertia / (p.time_constant * p.wheel_radius);
        let mut gain = Matrix6x2::zeros();
        gain[(0, 0)] = k;
        gain[(0, 1)] = k;
        gain[(5, 0)] = -k * p.track_width / 2.0;
        gain[(5, 1)] = k * p.track_width / 2.0;
        Self { mass_factor, damping_factor: Matrix6::identity() * damping, gain, potential: 0.0 }
    }
}

/// Architecture switches for the residual networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Restrict `M` and `D` to `diag(3x3, 3x3)` blocks.
    pub block_diagonal: bool,
    /// Learn only the first and last rows of `g`.
    pub gain_mask: bool,
    /// Learn a potential residual; planar robots keep `V` fixed.
    pub learn_potential: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 64, block_diagonal: false, gain_mask: false, learn_potential: false, init_seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Mass,
    Damping,
    Gain,
    Potential,
}

impl Term {
    fn prefix(self) -> &'static str {
        match self {
            Term::Mass => "mass",
            Term::Damping => "damping",
            Term::Gain => "gain",
            Term::Potential => "potential",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Net {
    term: Term,
    /// Parameter indices: `w0, b0, w1, b1, w2, b2`.
    params: [usize; 6],
}

/// Generalized coordinates and momentum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidState {
    pub q: GeneralizedCoord,
    pub pm: Vector6<f64>,
}

impl RigidState {
    pub fn new(q: GeneralizedCoord, pm: Vector6<f64>) -> Self {
        Self { q, pm }
    }

    /// State with momentum `M(q) ζ`.
    pub fn from_twist(model: &HamiltonianModel, q: GeneralizedCoord, zeta: &Twist) -> Self {
        let pm = model.mass(&q) * zeta.pack();
        Self { q, pm }
    }

    /// `[q; p]`, the integrated 18-vector.
    pub fn pack(&self) -> Vector18 {
        let mut x = Vector18::zeros();
        x.fixed_rows_mut::<12>(0).copy_from(&self.q.pack());
        x.fixed_rows_mut::<6>(12).copy_from(&self.pm);
        x
    }

    pub fn unpack(x: &[f64]) -> Self {
        let q = GeneralizedCoord::unpack(&x[..12]);
        let pm = Vector6::from_column_slice(&x[12..18]);
        Self { q, pm }
    }

    pub fn velocity(&self, model: &HamiltonianModel) -> Result<Twist> {
        let zeta = model.mass_inv(&self.q)? * self.pm;
        Ok(Twist::unpack(zeta.as_slice()))
    }

    /// `x = [q; ζ]`.
    pub fn export(&self, model: &HamiltonianModel) -> Result<Vector18> {
        let mut x = self.pack();
        let zeta = self.velocity(model)?.pack();
        x.fixed_rows_mut::<6>(12).copy_from(&zeta);
        Ok(x)
    }
}

thread_local! {
    static MAPS: Maps = Maps::new();
}

struct Maps {
    tri_full: Rc<SparseMap>,
    tri_block: Rc<SparseMap>,
    gain_full: Rc<SparseMap>,
    gain_mask: Rc<SparseMap>,
    q_cross: Rc<SparseMap>,
    p_cross: Rc<SparseMap>,
}

/// Entry positions of a lower-triangular `6x6` matrix, optionally block-diagonal.
fn tri_entries(block: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..6 {
        for j in 0..=i {
            if !block || (i < 3) == (j < 3) {
                out.push((i, j));
            }
        }
    }
    out
}

/// `(row, col, coeff)` triplets of `hat(x)` with `x` at offset `base` of the input.
fn hat_entries(base: usize) -> [(usize, usize, usize, f64); 6] {
    [
        (0, 1, base + 2, -1.0),
        (0, 2, base + 1, 1.0),
        (1, 0, base + 2, 1.0),
        (1, 2, base, -1.0),
        (2, 0, base + 1, -1.0),
        (2, 1, base, 1.0),
    ]
}

impl Maps {
    fn new() -> Self {
        let tri = |block: bool| {
            let entries = tri_entries(block);
            let n = entries.len();
            let e = entries.into_iter().enumerate().map(|(k, (i, j))| (i * 6 + j, k, 1.0)).collect();
            SparseMap::new([1, n], [6, 6], e)
        };
        let gain_full = SparseMap::new([1, 12], [6, 2], (0..12).map(|k| (k, k, 1.0)).collect());
        let gain_mask = SparseMap::new([1, 4], [6, 2], vec![(0, 0, 1.0), (1, 1, 1.0), (10, 2, 1.0), (11, 3, 1.0)]);
        // q× (12x6): top-left block R, rotation rows i carry hat(r_i) in columns 3..6.
        let mut qx = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                qx.push((i * 6 + j, 3 + 3 * i + j, 1.0));
            }
            for (r, c, src, coeff) in hat_entries(3 + 3 * i) {
                qx.push(((3 + 3 * i + r) * 6 + 3 + c, src, coeff));
            }
        }
        let q_cross = SparseMap::new([1, 12], [12, 6], qx);
        let mut px = Vec::new();
        for (r, c, src, coeff) in hat_entries(0) {
            px.push((r * 6 + 3 + c, src, coeff));
            px.push(((3 + r) * 6 + c, src, coeff));
        }
        for (r, c, src, coeff) in hat_entries(3) {
            px.push(((3 + r) * 6 + 3 + c, src, coeff));
        }
        let p_cross = SparseMap::new([1, 6], [6, 6], px);
        Self { tri_full: tri(false), tri_block: tri(true), gain_full, gain_mask, q_cross, p_cross }
    }
}

/// The learnable Hamiltonian model: fixed nominal terms plus residual networks.
#[derive(Clone, Debug)]
pub struct HamiltonianModel {
    nominal: Nominal,
    config: ModelConfig,
    params: ParamStore,
    nets: Vec<Net>,
}

impl HamiltonianModel {
    /// Builds the residual networks with zero output layers, so the model
    /// starts exactly at the nominal one.
    pub fn new(nominal: Nominal, config: ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let mut nets = Vec::new();
        let mut terms = vec![Term::Mass, Term::Damping, Term::Gain];
        if config.learn_potential {
            terms.push(Term::Potential);
        }
        let h = config.hidden;
        for term in terms {
            let out = output_size(term, &config);
            let layers = [(12, h), (h, h), (h, out)];
            let mut idx = [0; 6];
            for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
                let w = if l == 2 {
                    Tensor::zeros([fan_in, fan_out])
                } else {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::from_fn([fan_in, fan_out], |_, _| rng.random_range(-bound..bound))
                };
                idx[2 * l] = params.insert(format!("{}.w{l}", term.prefix()), w);
                idx[2 * l + 1] = params.insert(format!("{}.b{l}", term.prefix()), Tensor::zeros([1, fan_out]));
            }
            nets.push(Net { term, params: idx });
        }
        Self { nominal, config, params, nets }
    }

    pub fn nominal(&self) -> &Nominal {
        &self.nominal
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Loads parameter values, checking names and shapes against this architecture.
    pub fn load_params(&mut self, store: &ParamStore) -> Result<()> {
        self.params.copy_values_from(store)
    }

    /// Sets every residual to zero output.
    pub fn zero_residuals(&mut self) {
        for net in &self.nets {
            for &i in &net.params[4..] {
                self.params.value_mut(i).data_mut().fill(0.0);
            }
        }
    }

    /// Overwrites all parameters with uniform noise in `[-scale, scale]`.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..self.params.len() {
            for x in self.params.value_mut(i).data_mut() {
                *x = rng.random_range(-scale..scale);
            }
        }
    }

    /// Records the parameters on `tape`.
    pub fn bind<'m, 't>(&'m self, tape: &'t Tape) -> BoundModel<'m, 't> {
        let params = self.params.bind(tape);
        BoundModel::with_params(self, tape, params)
    }

    fn eval<T>(&self, f: impl for<'t> FnOnce(&'t Tape, &BoundModel<'_, 't>) -> Result<T>) -> Result<T> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        f(&tape, &bound)
    }

    pub fn mass(&self, q: &GeneralizedCoord) -> Matrix6<f64> {
        self.eval(|t, m| Ok(m.mass(q_var(t, q)).value().to_matrix())).expect("mass has no failure path")
    }

    pub fn mass_inv(&self, q: &GeneralizedCoord) -> Result<Matrix6<f64>> {
        check_mass(&self.mass(q))?;
        self.eval(|t, m| Ok(m.mass_inv(q_var(t, q))?.value().to_matrix()))
    }

    pub fn damping(&self, q: &GeneralizedCoord) -> Matrix6<f64> {
        self.eval(|t, m| Ok(m.damping(q_var(t, q)).value().to_matrix())).expect("damping has no failure path")
    }

    pub fn gain(&self, q: &GeneralizedCoord) -> Matrix6x2 {
        self.eval(|t, m| Ok(m.gain(q_var(t, q)).value().to_matrix())).expect("gain has no failure path")
    }

    pub fn potential(&self, q: &GeneralizedCoord) -> f64 {
        self.eval(|t, m| Ok(m.potential(q_var(t, q)).item())).expect("potential has no failure path")
    }

    /// `H = ½ pᵀ M⁻¹ p + V`.
    pub fn hamiltonian(&self, s: &RigidState) -> Result<f64> {
        check_mass(&self.mass(&s.q))?;
        self.eval(|t, m| Ok(m.hamiltonian(q_var(t, &s.q), p_var(t, &s.pm))?.item()))
    }

    /// `∂H/∂q` by reverse-mode differentiation of the Hamiltonian.
    pub fn dh_dq(&self, s: &RigidState) -> Result<Vector12> {
        self.eval(|t, m| {
            let q = q_var(t, &s.q);
            let h = m.hamiltonian(q, p_var(t, &s.pm))?;
            Ok(gradient_or_zero(t, h, q)?.value().to_vector())
        })
    }

    /// `d/dt (q, p)` at `s` under input `u`.
    pub fn vector_field(&self, s: &RigidState, u: &Vector2<f64>) -> Result<Vector18> {
        check_mass(&self.mass(&s.q))?;
        self.eval(|t, m| {
            let (qd, pd) = m.field(q_var(t, &s.q), p_var(t, &s.pm), t.row(u.as_slice()))?;
            let mut out = Vector18::zeros();
            out.fixed_rows_mut::<12>(0).copy_from(&qd.value().to_vector::<12>());
            out.fixed_rows_mut::<6>(12).copy_from(&pd.value().to_vector::<6>());
            Ok(out)
        })
    }

    /// The 18x18 matrix `[[0, q×], [−q×ᵀ, p×]] − [[0, 0], [0, D]]`.
    pub fn interconnection(&self, s: &RigidState) -> Matrix18 {
        let qx = crate::geom::q_cross(&s.q);
        let px = crate::geom::p_cross(&s.pm);
        let d = self.damping(&s.q);
        let mut j = Matrix18::zeros();
        j.fixed_view_mut::<12, 6>(0, 12).copy_from(&qx);
        j.fixed_view_mut::<6, 12>(12, 0).copy_from(&(-qx.transpose()));
        j.fixed_view_mut::<6, 6>(12, 12).copy_from(&(px - d));
        j
    }

    /// Directional derivative `(d/dε) M(q + ε dq) · z` at `ε = 0`.
    pub fn mass_derivative_times(&self, q: &GeneralizedCoord, dq: &Vector12, z: &Vector6<f64>) -> Vector6<f64> {
        self.eval(|t, m| {
            let qv = q_var(t, q);
            let mz = m.mass(qv).matmul(t.leaf(Tensor::from_vector(z)).t());
            let mut out = Vector6::zeros();
            for i in 0..6 {
                let yi = mz.slice(i, 0, [1, 1]);
                let g = gradient_or_zero(t, yi, qv)?.value().to_vector::<12>();
                out[i] = g.dot(dq);
            }
            Ok(out)
        })
        .expect("mass derivative has no failure path")
    }
}

fn output_size(term: Term, cfg: &ModelConfig) -> usize {
    match term {
        Term::Mass | Term::Damping => {
            if cfg.block_diagonal {
                12
            } else {
                21
            }
        }
        Term::Gain => {
            if cfg.gain_mask {
                4
            } else {
                12
            }
        }
        Term::Potential => 1,
    }
}

fn check_mass(m: &Matrix6<f64>) -> Result<()> {
    let min = SymmetricEigen::new(*m).eigenvalues.min();
    if !(min > MIN_MASS_EIGENVALUE) {
        return Err(Error::SingularMass(min));
    }
    Ok(())
}

fn gradient_or_zero<'t>(tape: &'t Tape, y: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    match tape.grad_graph(y, &[x]) {
        Ok(g) => Ok(g[0]),
        Err(Error::DetachedGraph) => Ok(tape.leaf(Tensor::zeros(x.shape()))),
        Err(e) => Err(e),
    }
}

pub fn q_var<'t>(tape: &'t Tape, q: &GeneralizedCoord) -> Var<'t> {
    tape.row(q.pack().as_slice())
}

pub fn p_var<'t>(tape: &'t Tape, p: &Vector6<f64>) -> Var<'t> {
    tape.row(p.as_slice())
}

/// A model whose parameters live on a tape. Row-vector conventions:
/// `q` is `[1, 12]`, `p` and `ζ` are `[1, 6]`, `u` is `[1, 2]`.
pub struct BoundModel<'m, 't> {
    model: &'m HamiltonianModel,
    tape: &'t Tape,
    params: Vec<Var<'t>>,
    mass_factor: Var<'t>,
    damping_factor: Var<'t>,
    gain: Var<'t>,
    floor: Var<'t>,
}

impl<'m, 't> BoundModel<'m, 't> {
    /// Uses existing parameter variables (index order of the model's store).
    pub fn with_params(model: &'m HamiltonianModel, tape: &'t Tape, params: Vec<Var<'t>>) -> Self {
        assert_eq!(params.len(), model.params.len(), "parameter count");
        let n = &model.nominal;
        Self {
            model,
            tape,
            params,
            mass_factor: tape.leaf(Tensor::from_matrix(&n.mass_factor)),
            damping_factor: tape.leaf(Tensor::from_matrix(&n.damping_factor)),
            gain: tape.leaf(Tensor::from_matrix(&n.gain)),
            floor: tape.leaf(Tensor::identity(6).scale(MASS_FLOOR)),
        }
    }

    pub fn params(&self) -> &[Var<'t>] {
        &self.params
    }

    pub fn model(&self) -> &'m HamiltonianModel {
        self.model
    }

    /// Raw residual network output for `term`, or `None` if it is not learned.
    pub fn residual(&self, term: Term, q: Var<'t>) -> Option<Var<'t>> {
        let net = self.model.nets.iter().find(|n| n.term == term)?;
        let p = |k: usize| self.params[net.params[k]];
        let h = (q.matmul(p(0)) + p(1)).tanh();
        let h = (h.matmul(p(2)) + p(3)).tanh();
        Some(h.matmul(p(4)) + p(5))
    }

    fn factor(&self, term: Term, nominal: Var<'t>, q: Var<'t>) -> Var<'t> {
        let block = self.model.config.block_diagonal;
        match self.residual(term, q) {
            Some(r) => {
                let tri = MAPS.with(|m| if block { m.tri_block.clone() } else { m.tri_full.clone() });
                nominal + r.linear(&tri)
            }
            None => nominal,
        }
    }

    pub fn mass_factor(&self, q: Var<'t>) -> Var<'t> {
        self.factor(Term::Mass, self.mass_factor, q)
    }

    pub fn mass(&self, q: Var<'t>) -> Var<'t> {
        let l = self.mass_factor(q);
        l.matmul(l.t())
    }

    /// `(M + εI)⁻¹`.
    pub fn mass_inv(&self, q: Var<'t>) -> Result<Var<'t>> {
        (self.mass(q) + self.floor).inverse()
    }

    pub fn damping(&self, q: Var<'t>) -> Var<'t> {
        let l = self.factor(Term::Damping, self.damping_factor, q);
        l.matmul(l.t())
    }

    /// Residual gain entries, for the sparsity penalty.
    pub fn gain_residual(&self, q: Var<'t>) -> Option<Var<'t>> {
        self.residual(Term::Gain, q)
    }

    pub fn gain(&self, q: Var<'t>) -> Var<'t> {
        let mask = self.model.config.gain_mask;
        match self.gain_residual(q) {
            Some(r) => {
                let map = MAPS.with(|m| if mask { m.gain_mask.clone() } else { m.gain_full.clone() });
                self.gain + r.linear(&map)
            }
            None => self.gain,
        }
    }

    pub fn potential(&self, q: Var<'t>) -> Var<'t> {
        let v = self.tape.scalar(self.model.nominal.potential);
        match self.residual(Term::Potential, q) {
            Some(r) => v + r,
            None => v,
        }
    }

    pub fn hamiltonian(&self, q: Var<'t>, p: Var<'t>) -> Result<Var<'t>> {
        let zeta = p.matmul(self.mass_inv(q)?);
        Ok(zeta.dot(p).scale(0.5) + self.potential(q))
    }

    /// Returns `(q̇, ṗ)` as recorded variables.
    pub fn field(&self, q: Var<'t>, p: Var<'t>, u: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let minv = self.mass_inv(q)?;
        let zeta = p.matmul(minv);
        let h = zeta.dot(p).scale(0.5) + self.potential(q);
        let dhdq = gradient_or_zero(self.tape, h, q)?;
        let (qx, px) = MAPS.with(|m| (q.linear(&m.q_cross), p.linear(&m.p_cross)));
        let qdot = zeta.matmul(qx.t());
        let pdot = zeta.matmul(px.t()) - dhdq.matmul(qx) - zeta.matmul(self.damping(q)) + u.matmul(self.gain(q).t());
        Ok((qdot, pdot))
    }
}
