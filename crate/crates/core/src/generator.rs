//! Attention generator producing a normalized perturbation of the neighbour
//! mean profile.
//!
//! Pipeline per sample: label fusion (coordinate and SST embeddings, two layer
//! norms around a point-wise fusion map, GLU gate), reference profile encoding
//! with a per-depth learnable bias, a depthwise-separable feature mapping
//! residual, stacked cross attention from the target label onto the
//! references, and a two-layer decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::SoundSpeedProfile;
use crate::diffcore::{
    attention, dsconv1d, ffn_block, gelu, glu, layer_norm, linear, Bound, Mode, ParameterStore, Tape, Var,
    LAYER_NORM_EPS,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::{NormStats, NormalizedSample};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub d_r: usize,
    pub n_attn_layers: usize,
    pub dropout: f64,
    pub n_refs: usize,
    pub depth_count: usize,
    pub ffn_mult: usize,
    pub fmb_kernel: usize,
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        GeneratorConfig {
            d_r: 32,
            n_attn_layers: 2,
            dropout: 0.05,
            n_refs: 8,
            depth_count: 64,
            ffn_mult: 2,
            fmb_kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_r == 0 || !self.d_r.is_multiple_of(2) {
            return Err(Error::Config(format!("d_r must be even and positive, got {}", self.d_r)));
        }
        if self.n_attn_layers == 0 {
            return Err(Error::Config("n_attn_layers must be at least 1".into()));
        }
        if self.fmb_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("fmb_kernel must be odd, got {}", self.fmb_kernel)));
        }
        if self.depth_count == 0 || self.n_refs == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("depth_count, n_refs and ffn_mult must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Target and reference label embeddings, `[1, d_r]` and `[N, d_r]`.
#[derive(Debug, Clone, Copy)]
pub struct FusedLabels<'t> {
    pub target: Var<'t>,
    pub refs: Var<'t>,
}

/// Intermediate values of one generator pass.
#[derive(Debug, Clone)]
pub struct GenTrace<'t> {
    pub labels: FusedLabels<'t>,
    /// Encoded reference profiles before feature mapping.
    pub ref_encoded: Var<'t>,
    pub ref_features: Var<'t>,
    pub attn_weights: Vec<Var<'t>>,
    pub h: Var<'t>,
    /// Normalized perturbation `[1, D]`.
    pub delta: Var<'t>,
}

pub(crate) fn add_lfb(ps: &mut ParameterStore, prefix: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    ps.add_linear(&format!("{prefix}.loc"), 2, d, rng)?;
    ps.add_linear(&format!("{prefix}.sst"), 1, d, rng)?;
    ps.add_layer_norm(&format!("{prefix}.ln1"), 2 * d)?;
    ps.add_linear(&format!("{prefix}.fuse"), 2 * d, 2 * d, rng)?;
    ps.add_layer_norm(&format!("{prefix}.ln2"), 2 * d)
}

pub(crate) fn add_encoder(ps: &mut ParameterStore, prefix: &str, depth: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    ps.add_const(&format!("{prefix}.pe"), &[depth], 0.0)?;
    ps.add_linear(&format!("{prefix}.proj"), depth, d, rng)
}

pub(crate) fn add_fmb(ps: &mut ParameterStore, prefix: &str, k: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    ps.add_uniform(&format!("{prefix}.k_dw"), &[1, k], k, rng)?;
    ps.add_const(&format!("{prefix}.k_pw"), &[1, 1], 1.0)?;
    ps.add_const(&format!("{prefix}.b"), &[1], 0.0)?;
    ps.add_const(&format!("{prefix}.xi"), &[1], 0.1)
}

/// Label fusion for points given as normalized `coords: [n, 2]` and `ssts: [n, 1]`.
pub fn lfb_forward<'t>(b: &Bound<'t>, prefix: &str, coords: Var<'t>, ssts: Var<'t>) -> Result<Var<'t>> {
    if coords.cols() != 2 || ssts.cols() != 1 || coords.rows() != ssts.rows() {
        return Err(Error::shape(format!(
            "label fusion: coords {:?} ssts {:?}",
            coords.shape(),
            ssts.shape()
        )));
    }
    let (wl, bl) = b.linear(&format!("{prefix}.loc"))?;
    let (ws, bs) = b.linear(&format!("{prefix}.sst"))?;
    let z = linear(coords, wl, bl)?.concat_cols(linear(ssts, ws, bs)?);
    let (g1, b1) = b.layer_norm(&format!("{prefix}.ln1"))?;
    let (wf, bf) = b.linear(&format!("{prefix}.fuse"))?;
    let (g2, b2) = b.layer_norm(&format!("{prefix}.ln2"))?;
    let z = layer_norm(z, g1, b1, LAYER_NORM_EPS)?;
    let z = layer_norm(linear(z, wf, bf)?, g2, b2, LAYER_NORM_EPS)?;
    glu(z)
}

/// Per-depth bias then a linear map from depth to feature space: `[n, D] -> [n, d]`.
pub fn encode_profiles<'t>(b: &Bound<'t>, prefix: &str, profiles: Var<'t>) -> Result<Var<'t>> {
    let pe = b.get(&format!("{prefix}.pe"))?;
    if pe.len() != profiles.cols() {
        return Err(Error::shape(format!(
            "profile encoder expects {} depths, got {:?}",
            pe.len(),
            profiles.shape()
        )));
    }
    let (w, bias) = b.linear(&format!("{prefix}.proj"))?;
    linear(profiles.add_row(pe), w, bias)
}

/// `Z + xi * SimpleGate(DSConv(Z))`, the convolution running along the
/// feature axis of each row with one shared single-channel kernel.
pub fn fmb_forward<'t>(b: &Bound<'t>, prefix: &str, z: Var<'t>) -> Result<Var<'t>> {
    let k_dw = b.get(&format!("{prefix}.k_dw"))?;
    let k_pw = b.get(&format!("{prefix}.k_pw"))?;
    let bias = b.get(&format!("{prefix}.b"))?;
    let xi = b.get(&format!("{prefix}.xi"))?;
    let rows = (0..z.rows())
        .map(|r| dsconv1d(z.slice_rows(r, r + 1), k_dw, k_pw, bias))
        .collect::<Result<Vec<_>>>()?;
    let conv = Var::concat_rows(&rows);
    let gated = conv * conv;
    Ok(z + gated * xi.broadcast(&z.shape()))
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub params: ParameterStore,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterStore::new();
        let d = cfg.d_r;
        add_lfb(&mut ps, "gen.lfb", d, &mut rng)?;
        add_encoder(&mut ps, "gen.enc", cfg.depth_count, d, &mut rng)?;
        add_fmb(&mut ps, "gen.fmb", cfg.fmb_kernel, &mut rng)?;
        for l in 0..cfg.n_attn_layers {
            for p in ["q", "k", "v"] {
                ps.add_linear(&format!("gen.attn{l}.{p}"), d, d, &mut rng)?;
            }
            ps.add_ffn(&format!("gen.attn{l}.ffn"), d, cfg.ffn_mult * d, &mut rng)?;
        }
        ps.add_linear("gen.dec.fc1", d, d, &mut rng)?;
        ps.add_linear_zero("gen.dec.fc2", d, cfg.depth_count)?;
        Ok(Generator { cfg, params: ps })
    }

    pub fn n_params(&self) -> usize {
        self.params.n_values()
    }

    fn check_sample(&self, s: &NormalizedSample) -> Result<()> {
        if s.depth_count != self.cfg.depth_count || s.n_refs != self.cfg.n_refs {
            return Err(Error::shape(format!(
                "generator built for D={} N={}, sample has D={} N={}",
                self.cfg.depth_count, self.cfg.n_refs, s.depth_count, s.n_refs
            )));
        }
        Ok(())
    }

    /// Full forward pass on `tape` with parameters `b`.
    pub fn forward<'t>(&self, tape: &'t Tape, b: &Bound<'t>, s: &NormalizedSample, mode: &mut Mode) -> Result<GenTrace<'t>> {
        self.check_sample(s)?;
        let n = s.n_refs;
        let t_coord = tape.constant(s.target_coord.to_vec(), &[1, 2]);
        let t_sst = tape.constant(vec![s.target_sst], &[1, 1]);
        let r_coord = tape.constant(s.ref_coords.iter().flatten().copied().collect(), &[n, 2]);
        let r_sst = tape.constant(s.ref_ssts.clone(), &[n, 1]);
        let r_prof = tape.constant(s.ref_profiles.clone(), &[n, s.depth_count]);

        let labels = FusedLabels {
            target: lfb_forward(b, "gen.lfb", t_coord, t_sst)?,
            refs: lfb_forward(b, "gen.lfb", r_coord, r_sst)?,
        };
        let ref_encoded = encode_profiles(b, "gen.enc", r_prof)?;
        let ref_features = fmb_forward(b, "gen.fmb", ref_encoded)?;
        let (h, attn_weights) = self.cmpab(b, labels, ref_features, mode)?;
        let delta = self.decode(b, h)?;
        Ok(GenTrace {
            labels,
            ref_encoded,
            ref_features,
            attn_weights,
            h,
            delta,
        })
    }

    /// Cross attention with the target label as the first query, reference
    /// labels as keys and mapped reference features as values.
    pub fn cmpab<'t>(&self, b: &Bound<'t>, labels: FusedLabels<'t>, values: Var<'t>, mode: &mut Mode) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let mut x = labels.target;
        let mut weights = Vec::with_capacity(self.cfg.n_attn_layers);
        for l in 0..self.cfg.n_attn_layers {
            let (wq, bq) = b.linear(&format!("gen.attn{l}.q"))?;
            let (wk, bk) = b.linear(&format!("gen.attn{l}.k"))?;
            let (wv, bv) = b.linear(&format!("gen.attn{l}.v"))?;
            let q = linear(x, wq, bq)?;
            let k = linear(labels.refs, wk, bk)?;
            let v = linear(values, wv, bv)?;
            let (o, w) = attention(q, k, v, mode)?;
            weights.push(w);
            x = ffn_block(x + o, &b.ffn(&format!("gen.attn{l}.ffn"))?, mode)?;
        }
        Ok((x, weights))
    }

    pub fn decode<'t>(&self, b: &Bound<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let (w1, b1) = b.linear("gen.dec.fc1")?;
        let (w2, b2) = b.linear("gen.dec.fc2")?;
        linear(gelu(linear(h, w1, b1)?), w2, b2)
    }

    /// Normalized perturbation in eval mode.
    pub fn perturbation(&self, s: &NormalizedSample) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let delta = self.forward(&tape, &b, s, &mut Mode::Eval)?.delta;
        tape.check_finite()?;
        Ok(delta.value())
    }

    /// Physical profile: neighbour mean plus the denormalized perturbation.
    pub fn generate(&self, s: &NormalizedSample, stats: &NormStats) -> Result<SoundSpeedProfile> {
        let delta = stats.denorm_perturbation(&self.perturbation(s)?);
        let speeds = s
            .physical_ref_mean
            .speeds()
            .iter()
            .zip(&delta)
            .map(|(m, d)| m + d)
            .collect();
        SoundSpeedProfile::new(speeds)
    }

    pub fn generate_batch(&self, samples: &[NormalizedSample], stats: &NormStats, exec: Execution) -> Vec<Result<SoundSpeedProfile>> {
        exec.map(samples, |s| self.generate(s, stats))
    }
}
