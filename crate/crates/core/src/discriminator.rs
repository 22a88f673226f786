//! Multi-task discriminator: realism score plus target coordinate and SST
//! regression from a candidate profile and its reference context.
//!
//! The candidate and every reference profile go through their own encoder and
//! feature mapping block. Each attention layer uses the candidate feature as
//! query and the reference features as keys; the shared weights feed two value
//! branches, one over reference coordinate embeddings and one over reference
//! SST embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{ffn_block, linear, stab_softmax, Bound, Mode, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::generator::{add_encoder, add_fmb, encode_profiles, fmb_forward, GeneratorConfig};
use crate::ingest::NormalizedSample;

#[derive(Debug, Clone, Copy)]
pub struct DiscOutput<'t> {
    pub realism: Var<'t>,
    /// Normalized lon/lat, `[1, 2]`.
    pub pred_loc: Var<'t>,
    pub pred_sst: Var<'t>,
    pub candidate_feature: Var<'t>,
    pub h_loc: Var<'t>,
    pub h_sst: Var<'t>,
    pub ref_loc_labels: Var<'t>,
    pub ref_sst_labels: Var<'t>,
}

/// Reference context on the tape, shared by the real and fake passes.
#[derive(Debug, Clone, Copy)]
pub struct DiscContext<'t> {
    pub ref_features: Var<'t>,
    pub loc_labels: Var<'t>,
    pub sst_labels: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: GeneratorConfig,
    pub params: ParameterStore,
}

impl Discriminator {
    /// Same widths as the generator it judges.
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterStore::new();
        let d = cfg.d_r;
        add_encoder(&mut ps, "disc.cand_enc", cfg.depth_count, d, &mut rng)?;
        add_fmb(&mut ps, "disc.cand_fmb", cfg.fmb_kernel, &mut rng)?;
        add_encoder(&mut ps, "disc.ref_enc", cfg.depth_count, d, &mut rng)?;
        add_fmb(&mut ps, "disc.ref_fmb", cfg.fmb_kernel, &mut rng)?;
        ps.add_linear("disc.lab_loc", 2, d, &mut rng)?;
        ps.add_linear("disc.lab_sst", 1, d, &mut rng)?;
        for l in 0..cfg.n_attn_layers {
            for p in ["q", "k", "v_loc", "v_sst"] {
                ps.add_linear(&format!("disc.attn{l}.{p}"), d, d, &mut rng)?;
            }
            ps.add_ffn(&format!("disc.attn{l}.ffn_loc"), d, cfg.ffn_mult * d, &mut rng)?;
            ps.add_ffn(&format!("disc.attn{l}.ffn_sst"), d, cfg.ffn_mult * d, &mut rng)?;
        }
        ps.add_linear("disc.head_loc", d, 2, &mut rng)?;
        ps.add_linear("disc.head_sst", d, 1, &mut rng)?;
        ps.add_linear("disc.realism", 2 * d, 1, &mut rng)?;
        Ok(Discriminator { cfg, params: ps })
    }

    pub fn n_params(&self) -> usize {
        self.params.n_values()
    }

    pub fn context<'t>(&self, tape: &'t Tape, b: &Bound<'t>, s: &NormalizedSample) -> Result<DiscContext<'t>> {
        if s.depth_count != self.cfg.depth_count {
            return Err(Error::shape(format!(
                "discriminator built for D={}, sample has D={}",
                self.cfg.depth_count, s.depth_count
            )));
        }
        let n = s.n_refs;
        let r_prof = tape.constant(s.ref_profiles.clone(), &[n, s.depth_count]);
        let r_coord = tape.constant(s.ref_coords.iter().flatten().copied().collect(), &[n, 2]);
        let r_sst = tape.constant(s.ref_ssts.clone(), &[n, 1]);
        let ref_features = fmb_forward(b, "disc.ref_fmb", encode_profiles(b, "disc.ref_enc", r_prof)?)?;
        let (wl, bl) = b.linear("disc.lab_loc")?;
        let (ws, bs) = b.linear("disc.lab_sst")?;
        Ok(DiscContext {
            ref_features,
            loc_labels: linear(r_coord, wl, bl)?,
            sst_labels: linear(r_sst, ws, bs)?,
        })
    }

    /// Score a normalized candidate profile `[D]` or `[1, D]` against `ctx`.
    pub fn forward<'t>(&self, b: &Bound<'t>, candidate: Var<'t>, ctx: &DiscContext<'t>, mode: &mut Mode) -> Result<DiscOutput<'t>> {
        if candidate.len() != self.cfg.depth_count {
            return Err(Error::shape(format!(
                "candidate has {} values, discriminator expects {}",
                candidate.len(),
                self.cfg.depth_count
            )));
        }
        let cand = candidate.reshape(&[1, self.cfg.depth_count]);
        let zt = fmb_forward(b, "disc.cand_fmb", encode_profiles(b, "disc.cand_enc", cand)?)?;
        let d = self.cfg.d_r;
        let (mut h_loc, mut h_sst) = (zt, zt);
        for l in 0..self.cfg.n_attn_layers {
            let (wq, bq) = b.linear(&format!("disc.attn{l}.q"))?;
            let (wk, bk) = b.linear(&format!("disc.attn{l}.k"))?;
            let (wvl, bvl) = b.linear(&format!("disc.attn{l}.v_loc"))?;
            let (wvs, bvs) = b.linear(&format!("disc.attn{l}.v_sst"))?;
            let q = linear(zt, wq, bq)?;
            let k = linear(ctx.ref_features, wk, bk)?;
            let a = stab_softmax(q.matmul(k.transpose()).scale(1.0 / (d as f64).sqrt()));
            let a = mode.dropout(a);
            let o_loc = a.matmul(linear(ctx.loc_labels, wvl, bvl)?);
            let o_sst = a.matmul(linear(ctx.sst_labels, wvs, bvs)?);
            h_loc = ffn_block(h_loc + o_loc, &b.ffn(&format!("disc.attn{l}.ffn_loc"))?, mode)?;
            h_sst = ffn_block(h_sst + o_sst, &b.ffn(&format!("disc.attn{l}.ffn_sst"))?, mode)?;
        }
        let (wl, bl) = b.linear("disc.head_loc")?;
        let (ws, bs) = b.linear("disc.head_sst")?;
        let (wr, br) = b.linear("disc.realism")?;
        Ok(DiscOutput {
            realism: linear(h_loc.concat_cols(h_sst), wr, br)?.reshape(&[1]),
            pred_loc: linear(h_loc, wl, bl)?,
            pred_sst: linear(h_sst, ws, bs)?.reshape(&[1]),
            candidate_feature: zt,
            h_loc,
            h_sst,
            ref_loc_labels: ctx.loc_labels,
            ref_sst_labels: ctx.sst_labels,
        })
    }

    /// Realism of a real and a fake candidate under one context.
    pub fn score_pair<'t>(
        &self,
        b: &Bound<'t>,
        real: Var<'t>,
        fake: Var<'t>,
        ctx: &DiscContext<'t>,
        mode: &mut Mode,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let r = self.forward(b, real, ctx, mode)?.realism;
        let f = self.forward(b, fake, ctx, mode)?.realism;
        Ok((r, f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheckOptions};

    fn cfg() -> GeneratorConfig {
        GeneratorConfig {
            d_r: 8,
            depth_count: 12,
            ..GeneratorConfig::desk()
        }
    }

    fn sample(seed: u64) -> NormalizedSample {
        use crate::datamodel::SoundSpeedProfile;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (8, 12);
        let ref_profiles: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let ref_mean = (0..d).map(|k| (0..n).map(|r| ref_profiles[r * d + k]).sum::<f64>() / n as f64).collect();
        NormalizedSample {
            target_coord: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            target_sst: rng.gen_range(-1.0..1.0),
            ref_coords: (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
            ref_ssts: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ref_profiles,
            ref_mean,
            target_profile: Some((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            physical_ref_mean: SoundSpeedProfile::new(vec![1500.0; d]).unwrap(),
            n_refs: n,
            depth_count: d,
        }
    }

    fn run(disc: &Discriminator, s: &NormalizedSample, cand: &[f64]) -> (f64, Vec<f64>, f64) {
        let t = Tape::new();
        let b = disc.params.bind(&t, false);
        let ctx = disc.context(&t, &b, s).unwrap();
        let o = disc.forward(&b, t.constant(cand.to_vec(), &[12]), &ctx, &mut Mode::Eval).unwrap();
        assert_eq!(o.realism.shape(), vec![1]);
        assert_eq!(o.pred_loc.len(), 2);
        assert_eq!(o.pred_sst.len(), 1);
        (o.realism.item(), o.pred_loc.value(), o.pred_sst.item())
    }

    #[test]
    fn shapes_and_determinism() {
        let disc = Discriminator::new(cfg(), 1).unwrap();
        let s = sample(1);
        let cand = s.target_profile.clone().unwrap();
        let a = run(&disc, &s, &cand);
        assert_eq!(a, run(&disc, &s, &cand));
        assert!(a.0.is_finite() && a.1.iter().all(|v| v.is_finite()) && a.2.is_finite());
    }

    #[test]
    fn zero_realism_head_scores_zero() {
        let mut disc = Discriminator::new(cfg(), 2).unwrap();
        for e in disc.params.entries_mut().iter_mut().filter(|e| e.name.starts_with("disc.realism")) {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
        for seed in 0..5 {
            let s = sample(seed);
            assert_eq!(run(&disc, &s, &s.ref_mean).0, 0.0);
        }
    }

    #[test]
    fn score_pair_identical_inputs_and_stress() {
        let disc = Discriminator::new(cfg(), 3).unwrap();
        let s = sample(3);
        let t = Tape::new();
        let b = disc.params.bind(&t, false);
        let ctx = disc.context(&t, &b, &s).unwrap();
        let c = t.constant(s.target_profile.clone().unwrap(), &[12]);
        let (r, f) = disc.score_pair(&b, c, c, &ctx, &mut Mode::Eval).unwrap();
        assert_eq!(r.item(), f.item());

        let mut big = s.clone();
        big.ref_profiles.iter_mut().for_each(|v| *v *= 1e4);
        let cand: Vec<f64> = s.target_profile.unwrap().iter().map(|v| v * -1e4).collect();
        let (r, l, q) = run(&disc, &big, &cand);
        assert!(r.is_finite() && l.iter().all(|v| v.is_finite()) && q.is_finite());
    }

    #[test]
    fn identical_references_permutation_invariant() {
        let disc = Discriminator::new(cfg(), 4).unwrap();
        let mut s = sample(4);
        let first = s.ref_profiles[..12].to_vec();
        for r in 0..8 {
            s.ref_profiles[r * 12..(r + 1) * 12].copy_from_slice(&first);
        }
        let mut p = s.clone();
        p.ref_coords.reverse();
        p.ref_ssts.reverse();
        p.ref_coords.swap(0, 3);
        p.ref_ssts.swap(0, 3);
        let cand = s.target_profile.clone().unwrap();
        let (a, b) = (run(&disc, &s, &cand).0, run(&disc, &p, &cand).0);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let disc = Discriminator::new(cfg(), 5).unwrap();
        let s = sample(5);
        let t = Tape::new();
        let b = disc.params.bind(&t, false);
        let ctx = disc.context(&t, &b, &s).unwrap();
        assert!(matches!(disc.forward(&b, t.zeros(&[11]), &ctx, &mut Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn full_backward_gradcheck() {
        let disc = Discriminator::new(cfg(), 6).unwrap();
        let s = sample(6);
        let cand = s.target_profile.clone().unwrap();
        let r = grad_check(
            |t, b| {
                let ctx = disc.context(t, b, &s)?;
                let o = disc.forward(b, t.constant(cand.clone(), &[12]), &ctx, &mut Mode::Eval)?;
                let loc_err = (o.pred_loc - t.constant(s.target_coord.to_vec(), &[1, 2])).square().sum();
                Ok(o.realism.softplus().sum() + loc_err + o.pred_sst.square().sum())
            },
            &disc.params,
            &GradCheckOptions { probes: 200, ..Default::default() },
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{}", r.max_rel_error);
    }
}
