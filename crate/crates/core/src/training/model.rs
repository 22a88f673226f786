use std::path::Path;

use crate::datamodel::{Sample, SoundSpeedProfile};
use crate::diffcore::Checkpoint;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::ingest::{apply_norm, NormStats};

/// Generator, discriminator and the normalization they were trained with.
#[derive(Debug, Clone)]
pub struct Ragan {
    pub gen: Generator,
    pub disc: Discriminator,
    pub stats: NormStats,
}

pub(crate) fn push_stats(ck: &mut Checkpoint, st: &NormStats) {
    let d = st.depth_count();
    ck.push("norm.speed_mean", &[d], &st.speed_mean);
    ck.push("norm.speed_std", &[d], &st.speed_std);
    ck.push("norm.sst", &[2], &[st.sst_mean, st.sst_std]);
    ck.push("norm.box", &[4], &[st.lon_range.0, st.lon_range.1, st.lat_range.0, st.lat_range.1]);
}

pub(crate) fn read_stats(ck: &Checkpoint) -> Result<NormStats> {
    let sst = ck.values_f64("norm.sst")?;
    let bx = ck.values_f64("norm.box")?;
    if sst.len() != 2 || bx.len() != 4 {
        return Err(Error::shape("malformed normalization entries in checkpoint"));
    }
    Ok(NormStats {
        speed_mean: ck.values_f64("norm.speed_mean")?,
        speed_std: ck.values_f64("norm.speed_std")?,
        sst_mean: sst[0],
        sst_std: sst[1],
        lon_range: (bx[0], bx[1]),
        lat_range: (bx[2], bx[3]),
    })
}

pub(crate) fn push_gen_config(ck: &mut Checkpoint, c: &GeneratorConfig) {
    ck.push_meta("d_r", c.d_r);
    ck.push_meta("n_attn_layers", c.n_attn_layers);
    ck.push_meta("dropout", c.dropout);
    ck.push_meta("n_refs", c.n_refs);
    ck.push_meta("depth_count", c.depth_count);
    ck.push_meta("ffn_mult", c.ffn_mult);
    ck.push_meta("fmb_kernel", c.fmb_kernel);
}

pub(crate) fn meta_parse<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ck.meta(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Contract(format!("checkpoint meta {key} missing or malformed")))
}

pub(crate) fn read_gen_config(ck: &Checkpoint) -> Result<GeneratorConfig> {
    Ok(GeneratorConfig {
        d_r: meta_parse(ck, "d_r")?,
        n_attn_layers: meta_parse(ck, "n_attn_layers")?,
        dropout: meta_parse(ck, "dropout")?,
        n_refs: meta_parse(ck, "n_refs")?,
        depth_count: meta_parse(ck, "depth_count")?,
        ffn_mult: meta_parse(ck, "ffn_mult")?,
        fmb_kernel: meta_parse(ck, "fmb_kernel")?,
    })
}

impl Ragan {
    pub fn new(cfg: GeneratorConfig, stats: NormStats, seed: u64) -> Result<Self> {
        if stats.depth_count() != cfg.depth_count {
            return Err(Error::shape(format!(
                "normalization covers {} depths, model expects {}",
                stats.depth_count(),
                cfg.depth_count
            )));
        }
        Ok(Ragan {
            gen: Generator::new(cfg.clone(), seed)?,
            disc: Discriminator::new(cfg, seed.wrapping_add(0x9e37_79b9))?,
            stats,
        })
    }

    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_meta("model", "ragan");
        ck.push_meta("epoch", epoch);
        push_gen_config(&mut ck, &self.gen.cfg);
        ck.push_store(&self.gen.params);
        ck.push_store(&self.disc.params);
        push_stats(&mut ck, &self.stats);
        ck
    }

    pub fn save(&self, stem: &Path, epoch: usize) -> Result<()> {
        self.checkpoint(epoch).save(stem)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("model") != Some("ragan") {
            return Err(Error::Contract("checkpoint does not hold a generator/discriminator pair".into()));
        }
        let cfg = read_gen_config(ck)?;
        let mut m = Ragan::new(cfg, read_stats(ck)?, 0)?;
        ck.restore_into(&mut m.gen.params)?;
        ck.restore_into(&mut m.disc.params)?;
        Ok(m)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(stem)?)
    }

    pub fn predict(&self, s: &Sample) -> Result<SoundSpeedProfile> {
        self.gen.generate(&apply_norm(s, &self.stats)?, &self.stats)
    }
}
