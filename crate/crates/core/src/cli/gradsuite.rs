//! Finite-difference checks over every tape primitive, the layer functions and
//! the three trainable networks, on small random shapes.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{CnnConfig, CnnModel};
use crate::datamodel::SoundSpeedProfile;
use crate::diffcore::{
    attention, conv1d, dsconv1d, ffn_block, gelu, glu, grad_check, layer_norm, linear, max_pool_rows2,
    simple_gate, stab_softmax, Bound, Dropout, GradCheckOptions, Mode, ParameterStore, Tape, Var, LAYER_NORM_EPS,
};
use crate::discriminator::Discriminator;
use crate::error::Result;
use crate::exec::Execution;
use crate::generator::{Generator, GeneratorConfig};
use crate::ingest::{NormStats, NormalizedSample};
use crate::training::gradient_penalty;

type Objective = Box<dyn for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub name: String,
    pub n_params: usize,
    pub probes: usize,
    pub max_rel_error: f64,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

struct Case {
    name: String,
    store: ParameterStore,
    f: Objective,
}

struct Builder {
    rng: ChaCha8Rng,
    cases: Vec<Case>,
}

/// Values bounded away from zero so that kinks (relu, max) are not probed.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Contract an output with fixed random weights so no gradient is trivially symmetric.
fn probe<'t>(t: &'t Tape, out: Var<'t>, seed: u64) -> Var<'t> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (out * t.constant(w, &out.shape())).sum()
}

impl Builder {
    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.gen_range(lo..=hi)
    }

    fn store(&mut self, tensors: &[(&str, Vec<usize>)]) -> ParameterStore {
        let mut ps = ParameterStore::new();
        for (name, shape) in tensors {
            let n = shape.iter().product();
            let v = away_from_zero(&mut self.rng, n);
            ps.add(name, shape, v).expect("fresh store");
        }
        ps
    }

    fn push(&mut self, name: &str, store: ParameterStore, f: Objective) {
        self.cases.push(Case {
            name: name.to_string(),
            store,
            f,
        });
    }

    fn elementwise(&mut self) {
        let (r, c) = (self.dim(2, 6), self.dim(2, 6));
        let sh = vec![r, c];
        type Unary = for<'t> fn(Var<'t>) -> Var<'t>;
        let unary: [(&str, Unary); 12] = [
            ("scale", |x| x.scale(-1.7)),
            ("offset", |x| x.square().offset(0.3)),
            ("exp", |x| x.exp()),
            ("ln", |x| x.square().offset(0.5).ln()),
            ("tanh", |x| x.tanh()),
            ("sigmoid", |x| x.sigmoid()),
            ("softplus", |x| x.softplus()),
            ("recip", |x| x.square().offset(0.5).recip()),
            ("sqrt", |x| x.square().offset(0.5).sqrt()),
            ("square", |x| x.square()),
            ("relu", |x| x.relu()),
            ("neg", |x| -x),
        ];
        for (k, (name, op)) in unary.into_iter().enumerate() {
            let st = self.store(&[("x", sh.clone())]);
            self.push(name, st, Box::new(move |t, b| Ok(probe(t, op(b.get("x")?), k as u64))));
        }
        let st = self.store(&[("x", sh.clone()), ("y", sh.clone())]);
        self.push(
            "add_sub_mul",
            st,
            Box::new(|t, b| {
                let (x, y) = (b.get("x")?, b.get("y")?);
                Ok(probe(t, x * y - x + y * y, 20))
            }),
        );
    }

    fn structural(&mut self) {
        let (m, k, n) = (self.dim(1, 5), self.dim(1, 5), self.dim(1, 5));
        let st = self.store(&[("a", vec![m, k]), ("b", vec![k, n])]);
        self.push("matmul", st, Box::new(|t, b| Ok(probe(t, b.get("a")?.matmul(b.get("b")?), 30))));

        let st = self.store(&[("a", vec![m, k])]);
        self.push(
            "transpose_reshape",
            st,
            Box::new(move |t, b| Ok(probe(t, b.get("a")?.transpose().reshape(&[k * m]), 31))),
        );

        let len = self.dim(3, 12);
        let picks: Vec<usize> = (0..len + 3)
            .map(|i| if i % 5 == 4 { crate::diffcore::ZERO_INDEX } else { self.rng.gen_range(0..len) })
            .collect();
        let st = self.store(&[("x", vec![len])]);
        let g = picks.clone();
        self.push(
            "gather",
            st,
            Box::new(move |t, b| {
                let idx: Rc<[usize]> = g.clone().into();
                Ok(probe(t, b.get("x")?.gather(idx, &[g.len()]), 32))
            }),
        );
        let targets: Vec<usize> = (0..len).map(|_| self.rng.gen_range(0..4)).collect();
        let st = self.store(&[("x", vec![len])]);
        self.push(
            "scatter_add",
            st,
            Box::new(move |t, b| {
                let idx: Rc<[usize]> = targets.clone().into();
                Ok(probe(t, b.get("x")?.scatter_add(idx, &[4]), 33))
            }),
        );

        let (r, c) = (self.dim(2, 6), self.dim(2, 6));
        let st = self.store(&[("x", vec![r, c]), ("row", vec![c]), ("col", vec![r, 1]), ("s", vec![1])]);
        self.push(
            "reductions",
            st,
            Box::new(|t, b| {
                let x = b.get("x")?;
                let parts = [
                    probe(t, x.sum_cols(), 34),
                    probe(t, x.mean_cols(), 35),
                    probe(t, x.sum_rows(), 36),
                    x.mean().scale(1.3),
                    x.square().sum().scale(0.2),
                ];
                Ok(parts.into_iter().reduce(|a, v| a + v).expect("nonempty"))
            }),
        );
        self.push(
            "broadcasting",
            self.cases.last().expect("pushed").store.clone(),
            Box::new(move |t, b| {
                let (x, row, col, s) = (b.get("x")?, b.get("row")?, b.get("col")?, b.get("s")?);
                let row2 = row.reshape(&[1, c]);
                let parts = [
                    probe(t, x.add_row(row) * x.mul_row(row), 37),
                    probe(t, x.add_col(col) * x.mul_col(col), 38),
                    probe(t, row2.tile_rows(r), 39),
                    probe(t, col.tile_cols(c), 40),
                    probe(t, x * s.broadcast(&[r, c]), 41),
                ];
                Ok(parts.into_iter().reduce(|a, v| a + v).expect("nonempty"))
            }),
        );
        self.push(
            "slice_concat",
            self.cases.last().expect("pushed").store.clone(),
            Box::new(move |t, b| {
                let (x, col) = (b.get("x")?, b.get("col")?);
                let left = x.slice_cols(0, c / 2 + 1);
                let top = x.slice_rows(0, r / 2 + 1);
                let joined = left.concat_cols(col);
                let stacked = Var::concat_rows(&[top, x, top.scale(2.0)]);
                Ok(probe(t, joined, 42) + probe(t, stacked, 43))
            }),
        );
    }

    fn layers(&mut self) {
        let (r, i, o) = (self.dim(1, 6), self.dim(2, 8), self.dim(1, 8));
        let st = self.store(&[("x", vec![r, i]), ("w", vec![i, o]), ("b", vec![o])]);
        self.push(
            "linear",
            st,
            Box::new(|t, b| Ok(probe(t, linear(b.get("x")?, b.get("w")?, b.get("b")?)?, 50))),
        );

        let st = self.store(&[("x", vec![r, i]), ("g", vec![i]), ("b", vec![i])]);
        self.push(
            "layer_norm",
            st,
            Box::new(|t, b| {
                Ok(probe(t, layer_norm(b.get("x")?, b.get("g")?, b.get("b")?, LAYER_NORM_EPS)?, 51))
            }),
        );

        let st = self.store(&[("x", vec![r, 2 * i])]);
        self.push("glu", st, Box::new(|t, b| Ok(probe(t, glu(b.get("x")?)?, 52))));
        let st = self.store(&[("x", vec![r, i])]);
        self.push("simple_gate", st, Box::new(|t, b| Ok(probe(t, simple_gate(b.get("x")?), 53))));
        let st = self.store(&[("x", vec![r, i])]);
        self.push("gelu", st, Box::new(|t, b| Ok(probe(t, gelu(b.get("x")?), 54))));
        let st = self.store(&[("x", vec![r, i])]);
        self.push("stab_softmax", st, Box::new(|t, b| Ok(probe(t, stab_softmax(b.get("x")?), 55))));

        let st = self.store(&[("x", vec![r, i])]);
        let rate = 0.3;
        self.push(
            "dropout",
            st,
            Box::new(move |t, b| {
                let mut mode = Mode::Train(Dropout::new(rate, 9));
                Ok(probe(t, mode.dropout(b.get("x")?), 56))
            }),
        );

        let (c, l, co) = (self.dim(1, 4), self.dim(3, 12), self.dim(1, 4));
        let k = [1usize, 3, 5][self.dim(0, 2)];
        let st = self.store(&[("x", vec![c, l]), ("kd", vec![c, k]), ("kp", vec![co, c]), ("b", vec![co])]);
        self.push(
            "dsconv1d",
            st,
            Box::new(|t, b| {
                Ok(probe(t, dsconv1d(b.get("x")?, b.get("kd")?, b.get("kp")?, b.get("b")?)?, 57))
            }),
        );

        let (ci, co2) = (self.dim(1, 4), self.dim(1, 4));
        let st = self.store(&[("x", vec![l, ci]), ("w", vec![k * ci, co2]), ("b", vec![co2])]);
        self.push(
            "conv1d",
            st,
            Box::new(move |t, b| Ok(probe(t, conv1d(b.get("x")?, b.get("w")?, b.get("b")?, k)?, 58))),
        );

        let st = self.store(&[("x", vec![l, ci])]);
        self.push("max_pool_rows2", st, Box::new(|t, b| Ok(probe(t, max_pool_rows2(b.get("x")?)?, 59))));

        let (nq, nk, d, dv) = (self.dim(1, 4), self.dim(1, 8), self.dim(1, 8), self.dim(1, 8));
        let st = self.store(&[("q", vec![nq, d]), ("k", vec![nk, d]), ("v", vec![nk, dv])]);
        self.push(
            "attention",
            st,
            Box::new(|t, b| {
                let (out, w) = attention(b.get("q")?, b.get("k")?, b.get("v")?, &mut Mode::Eval)?;
                Ok(probe(t, out, 60) + probe(t, w, 61))
            }),
        );

        let (w, h) = (self.dim(2, 8), self.dim(2, 16));
        let mut st = self.store(&[("x", vec![r, w])]);
        st.add_ffn("f", w, h, &mut self.rng).expect("fresh names");
        self.push(
            "ffn_block",
            st,
            Box::new(|t, b| {
                let p = b.ffn("f")?;
                Ok(probe(t, ffn_block(b.get("x")?, &p, &mut Mode::Train(Dropout::new(0.1, 3)))?, 62))
            }),
        );
    }

    fn networks(&mut self) {
        let d_r = 2 * self.dim(2, 6);
        let depth = self.dim(8, 16);
        let gcfg = GeneratorConfig {
            d_r,
            depth_count: depth,
            n_attn_layers: self.dim(1, 2),
            ..GeneratorConfig::desk()
        };
        let s = random_sample(&mut self.rng, depth);

        let gen = Generator::new(gcfg.clone(), self.rng.gen()).expect("valid config");
        // a zero final layer hides the upstream graph; perturb it for the check
        let mut gstore = gen.params.clone();
        let fc2 = gstore.get_mut("gen.dec.fc2.w").expect("decoder weight");
        fc2.values = away_from_zero(&mut self.rng, fc2.values.len()).iter().map(|v| v * 0.3).collect();
        let sg = s.clone();
        self.push(
            "generator",
            gstore,
            Box::new(move |t, b| {
                let tr = gen.forward(t, b, &sg, &mut Mode::Train(Dropout::new(0.05, 11)))?;
                let target = sg.target_profile.clone().expect("target");
                let fake = tr.delta.reshape(&[depth]) + t.constant(sg.ref_mean.clone(), &[depth]);
                Ok((fake - t.constant(target, &[depth])).square().mean().sqrt() + probe(t, tr.h, 70))
            }),
        );

        let disc = Discriminator::new(gcfg, self.rng.gen()).expect("valid config");
        let dstore = disc.params.clone();
        let sd = s.clone();
        let disc2 = disc.clone();
        self.push(
            "discriminator",
            dstore.clone(),
            Box::new(move |t, b| {
                let ctx = disc.context(t, b, &sd)?;
                let cand = sd.target_profile.clone().expect("target");
                let o = disc.forward(b, t.constant(cand, &[depth]), &ctx, &mut Mode::Train(Dropout::new(0.05, 12)))?;
                let loc = (o.pred_loc - t.constant(sd.target_coord.to_vec(), &[1, 2])).square().sum();
                Ok(o.realism.softplus().sum() + loc + o.pred_sst.square().sum())
            }),
        );
        let sp = s.clone();
        self.push(
            "r1_penalty",
            dstore,
            Box::new(move |t, b| {
                let ctx = disc2.context(t, b, &sp)?;
                let x = t.input(sp.target_profile.clone().expect("target"), &[depth]);
                let score = disc2.forward(b, x, &ctx, &mut Mode::Eval)?.realism;
                gradient_penalty(t, &[x], &[score])
            }),
        );

        let cdepth = 8 * self.dim(1, 2);
        let cfg = CnnConfig {
            depth_count: cdepth,
            channel_div: 16,
            hidden: self.dim(4, 12),
            ..CnnConfig::desk()
        };
        let stats = NormStats {
            speed_mean: vec![1500.0; cdepth],
            speed_std: vec![1.0; cdepth],
            sst_mean: 10.0,
            sst_std: 1.0,
            lon_range: (0.0, 1.0),
            lat_range: (0.0, 1.0),
        };
        let cnn = CnnModel::new(cfg, stats).expect("valid config");
        let mut cstore = cnn.params.clone();
        let fc2 = cstore.get_mut("cnn.fc2.w").expect("head weight");
        fc2.values = away_from_zero(&mut self.rng, fc2.values.len()).iter().map(|v| v * 0.3).collect();
        let sc = random_sample(&mut self.rng, cdepth);
        self.push(
            "cnn",
            cstore,
            Box::new(move |t, b| Ok(probe(t, cnn.forward(t, b, &sc)?, 80))),
        );
    }
}

fn random_sample(rng: &mut ChaCha8Rng, d: usize) -> NormalizedSample {
    let n = 8;
    let ref_profiles: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let ref_mean = (0..d)
        .map(|k| (0..n).map(|r| ref_profiles[r * d + k]).sum::<f64>() / n as f64)
        .collect();
    NormalizedSample {
        target_coord: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        target_sst: rng.gen_range(-1.0..1.0),
        ref_coords: (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
        ref_ssts: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ref_profiles,
        ref_mean,
        target_profile: Some((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        physical_ref_mean: SoundSpeedProfile::new(vec![1500.0; d]).expect("finite"),
        n_refs: n,
        depth_count: d,
    }
}

/// Run every check. Shapes are drawn from `seed`; all dimensions are at most 16.
pub fn gradcheck_suite(seed: u64, exec: Execution) -> Result<Vec<GradCheckRow>> {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        cases: Vec::new(),
    };
    b.elementwise();
    b.structural();
    b.layers();
    b.networks();
    let opts = GradCheckOptions {
        probes: 96,
        seed,
        exec,
        ..GradCheckOptions::default()
    };
    b.cases
        .into_iter()
        .map(|c| {
            let r = grad_check(&c.f, &c.store, &opts)?;
            Ok(GradCheckRow {
                name: c.name,
                n_params: c.store.n_values(),
                probes: r.probes.len(),
                max_rel_error: r.max_rel_error,
            })
        })
        .collect()
}
