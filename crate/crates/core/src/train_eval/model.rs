//! Any trained model behind one type: training dispatch, cold-user
//! scoring, and conversion to and from a flat set of named tensors.

use crate::autograd::ParamSet;
use crate::baselines::{
    train_bpr, train_emcdr, train_emcdr_source, train_gru4rec, BprModel, EmcdrModel, EmcdrSource, EmcdrSourceStage,
    Gru4Rec, Gru4RecModel,
};
use crate::cross_domain::Mapper;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Ablation;
use crate::source_model::SourceModel;
use crate::tensor::Mat;
use crate::train_eval::config::{ModelKind, TrainConfig};
use crate::train_eval::pipeline::{
    add_prefixed, strip_prefixed, train_hcdir, train_source, HcdirModel, SourceStage, TrainOutcome,
};
use crate::train_eval::split::Split;

#[derive(Clone, Debug)]
pub enum TrainedModel {
    Hcdir(HcdirModel),
    Bpr(BprModel),
    Gru4rec(Gru4RecModel),
    Emcdr(EmcdrModel),
}

fn need<'a>(t: &'a ParamSet, name: &str) -> Result<&'a Mat> {
    t.by_name(name)
        .ok_or_else(|| Error::Integrity(format!("missing tensor {name}")))
}

fn need_group(t: &ParamSet, prefix: &str) -> Result<ParamSet> {
    let g = strip_prefixed(t, prefix);
    if g.is_empty() {
        return Err(Error::Integrity(format!("no tensors under {prefix}/")));
    }
    Ok(g)
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Hcdir(_) => ModelKind::Hcdir,
            TrainedModel::Bpr(_) => ModelKind::Bpr,
            TrainedModel::Gru4rec(_) => ModelKind::Gru4rec,
            TrainedModel::Emcdr(m) if m.source.is_gru() => ModelKind::EmcdrGru,
            TrainedModel::Emcdr(_) => ModelKind::EmcdrBpr,
        }
    }

    /// One row of item scores per user in `users`, computed without any of
    /// their target-domain data.
    pub fn cold_scores(&self, ds: &Dataset, users: &[usize]) -> Result<Mat> {
        match self {
            TrainedModel::Hcdir(m) => m.cold_scores(ds, users),
            TrainedModel::Bpr(m) => Ok(m.cold_scores(users)),
            TrainedModel::Gru4rec(m) => Ok(m.cold_scores(users)),
            TrainedModel::Emcdr(m) => m.cold_scores(ds, users),
        }
    }

    /// Every tensor of the model under a `stage/` prefix.
    pub fn tensors(&self) -> ParamSet {
        let mut t = ParamSet::new();
        match self {
            TrainedModel::Hcdir(m) => {
                add_prefixed(&mut t, "tahin", &m.tahin);
                add_prefixed(&mut t, "source", m.source.params());
                t.insert("source_items/vectors", m.source.item_vectors().clone());
                add_prefixed(&mut t, "mapper", m.mapper.params());
                t.insert("target/users", m.users.clone());
                t.insert("target/items", m.items.clone());
            }
            TrainedModel::Bpr(m) => {
                t.insert("bpr/items", m.items.clone());
                t.insert("bpr/prior", Mat::row_vector(&m.prior));
            }
            TrainedModel::Gru4rec(m) => add_prefixed(&mut t, "gru4rec", m.model.params()),
            TrainedModel::Emcdr(m) => {
                m.source.add_tensors(&mut t);
                add_prefixed(&mut t, "mapper", m.mapper.params());
                t.insert("target/users", m.users.clone());
                t.insert("target/items", m.items.clone());
            }
        }
        t
    }

    /// Inverse of [`TrainedModel::tensors`].
    pub fn from_tensors(kind: ModelKind, t: &ParamSet, cfg: &TrainConfig) -> Result<Self> {
        let max_len = cfg.source.max_seq_len;
        Ok(match kind {
            ModelKind::Hcdir => {
                let source = SourceModel::from_params(need_group(t, "source")?, need(t, "source_items/vectors")?.clone())?;
                TrainedModel::Hcdir(HcdirModel {
                    tahin: need_group(t, "tahin")?,
                    source,
                    mapper: Mapper::from_params(need_group(t, "mapper")?)?,
                    items: need(t, "target/items")?.clone(),
                    users: need(t, "target/users")?.clone(),
                    max_seq_len: max_len,
                })
            }
            ModelKind::Bpr => {
                let prior = need(t, "bpr/prior")?;
                let items = need(t, "bpr/items")?;
                if prior.rows() != 1 || prior.cols() != items.cols() {
                    return Err(Error::Integrity("bpr/prior does not match the item table".into()));
                }
                TrainedModel::Bpr(BprModel {
                    items: items.clone(),
                    prior: prior.row(0).to_vec(),
                })
            }
            ModelKind::Gru4rec => TrainedModel::Gru4rec(Gru4RecModel {
                model: Gru4Rec::from_params(need_group(t, "gru4rec")?, max_len)?,
            }),
            ModelKind::EmcdrBpr | ModelKind::EmcdrGru => {
                let source = if kind == ModelKind::EmcdrGru {
                    EmcdrSource::Gru(Gru4Rec::from_params(need_group(t, "source")?, max_len)?)
                } else {
                    EmcdrSource::Bpr(need(t, "source/users")?.clone())
                };
                TrainedModel::Emcdr(EmcdrModel {
                    source,
                    mapper: Mapper::from_params(need_group(t, "mapper")?)?,
                    items: need(t, "target/items")?.clone(),
                    users: need(t, "target/users")?.clone(),
                })
            }
        })
    }
}

/// Source-domain stages keyed by everything they depend on, so runs that
/// differ only in eta or ablation train them once.
#[derive(Default)]
pub struct SourceCache {
    hcdir: Vec<(String, SourceStage)>,
    emcdr: Vec<(String, bool, EmcdrSourceStage)>,
}

fn source_key(ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.ablation = Ablation::Full;
    Ok(format!(
        "{}|{}|{:?}",
        ds.content_hash,
        serde_json::to_string(&c)?,
        split.valid
    ))
}

impl SourceCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn hcdir(&mut self, ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<&SourceStage> {
        let key = source_key(ds, split, cfg)?;
        if let Some(i) = self.hcdir.iter().position(|(k, _)| *k == key) {
            return Ok(&self.hcdir[i].1);
        }
        let stage = train_source(ds, split, cfg)?;
        self.hcdir.push((key, stage));
        Ok(&self.hcdir.last().expect("just pushed").1)
    }

    fn emcdr(&mut self, gru: bool, ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<&EmcdrSourceStage> {
        let key = source_key(ds, split, cfg)?;
        if let Some(i) = self.emcdr.iter().position(|(k, g, _)| *k == key && *g == gru) {
            return Ok(&self.emcdr[i].2);
        }
        let stage = train_emcdr_source(gru, ds, split, cfg)?;
        self.emcdr.push((key, gru, stage));
        Ok(&self.emcdr.last().expect("just pushed").2)
    }
}

fn boxed<M>(out: TrainOutcome<M>, wrap: impl FnOnce(M) -> TrainedModel) -> TrainOutcome<TrainedModel> {
    TrainOutcome {
        model: out.model.map(wrap),
        log: out.log,
        notes: out.notes,
        diverged: out.diverged,
        partial: out.partial,
    }
}

/// Trains `kind` on `split`. With a cache, source stages are reused.
pub fn train_model(
    kind: ModelKind,
    ds: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    cache: Option<&mut SourceCache>,
) -> Result<TrainOutcome<TrainedModel>> {
    cfg.validate()?;
    let mut out = match kind {
        ModelKind::Hcdir => {
            let src = match cache {
                Some(c) => Some(c.hcdir(ds, split, cfg)?),
                None => None,
            };
            boxed(train_hcdir(ds, split, cfg, src)?, TrainedModel::Hcdir)
        }
        ModelKind::Bpr => boxed(train_bpr(ds, split, cfg)?, TrainedModel::Bpr),
        ModelKind::Gru4rec => boxed(train_gru4rec(ds, split, cfg)?, TrainedModel::Gru4rec),
        ModelKind::EmcdrBpr | ModelKind::EmcdrGru => {
            let gru = kind == ModelKind::EmcdrGru;
            let src = match cache {
                Some(c) => Some(c.emcdr(gru, ds, split, cfg)?),
                None => None,
            };
            boxed(train_emcdr(gru, ds, split, cfg, src)?, TrainedModel::Emcdr)
        }
    };
    if !kind.uses_graph_structure() && cfg.ablation != Ablation::Full {
        out.notes.push(format!(
            "warning: {kind} reads purchases only; ablation {} has no effect",
            cfg.ablation
        ));
    }
    if !kind.uses_graph_structure() {
        out.notes.push(format!("warning: {kind} ignores the meta-path configuration"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, GenConfig};
    use crate::train_eval::split::{split_dataset, SplitSpec};

    fn small() -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig {
            users: 300,
            source_items: 40,
            target_items: 10,
            agents: 20,
            properties: 8,
            ..GenConfig::default()
        };
        generate(&cfg, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        (dir, ds)
    }

    fn quick() -> TrainConfig {
        let mut c = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        c.source.word2vec.epochs = 2;
        c
    }

    #[test]
    fn tensors_round_trip_for_every_kind() {
        let (_dir, ds) = small();
        let split = split_dataset(&ds, &SplitSpec::default()).unwrap();
        let cfg = quick();
        let mut cache = SourceCache::new();
        for kind in ModelKind::ALL {
            let out = train_model(kind, &ds, &split, &cfg, Some(&mut cache)).unwrap();
            let m = out.model.unwrap();
            assert_eq!(m.kind(), kind);
            let back = TrainedModel::from_tensors(kind, &m.tensors(), &cfg).unwrap();
            let a = m.cold_scores(&ds, &split.test).unwrap();
            let b = back.cold_scores(&ds, &split.test).unwrap();
            assert_eq!(a, b, "{kind}");
        }
        assert!(TrainedModel::from_tensors(ModelKind::Hcdir, &ParamSet::new(), &cfg).is_err());
    }

    #[test]
    fn cached_source_stage_gives_identical_models() {
        let (_dir, ds) = small();
        let split = split_dataset(&ds, &SplitSpec::default()).unwrap();
        let cfg = quick();
        let mut cache = SourceCache::new();
        let a = train_model(ModelKind::EmcdrGru, &ds, &split, &cfg, Some(&mut cache)).unwrap();
        let b = train_model(ModelKind::EmcdrGru, &ds, &split, &cfg, None).unwrap();
        let (a, b) = (a.model.unwrap(), b.model.unwrap());
        assert_eq!(
            a.cold_scores(&ds, &split.test).unwrap(),
            b.cold_scores(&ds, &split.test).unwrap()
        );
    }

    #[test]
    fn purchase_only_models_warn_about_graph_options() {
        let (_dir, ds) = small();
        let split = split_dataset(&ds, &SplitSpec::default()).unwrap();
        let cfg = TrainConfig {
            ablation: Ablation::NoAgent,
            ..quick()
        };
        let out = train_model(ModelKind::Bpr, &ds, &split, &cfg, None).unwrap();
        assert!(out.notes.iter().any(|n| n.starts_with("warning")), "{:?}", out.notes);
    }
}
