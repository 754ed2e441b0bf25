//! Reading inputs and writing provenance-stamped outputs.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use divnet_core::baselines::{upstream_lists, PointwiseScorer};
use divnet_core::data::{checkpoint_hash, load_scorer, parse_letor, Checkpoint};
use divnet_core::RankingInstance;
use serde::Serialize;

use crate::Failure;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SCORER_FILE: &str = "scorer.json";
pub const PRM_FILE: &str = "prm.json";

/// Comment lines that open every CSV artifact.
pub fn provenance<T: Serialize>(config: &T, hash: Option<&str>) -> String {
    let config = serde_json::to_string(config).expect("config serializes");
    format!("# config: {config}\n# checkpoint: {}\n", hash.unwrap_or("none"))
}

/// Fails with a usage error when `path` does not exist.
pub fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} {} does not exist", path.display())))
    }
}

pub fn read_letor(path: &Path, feature_width: Option<usize>) -> Result<Vec<RankingInstance>, Failure> {
    require_file(path, "data file")?;
    let file = File::open(path).map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))?;
    let instances = parse_letor(BufReader::new(file), feature_width, 0)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if instances.is_empty() {
        return Err(Failure::usage(format!("{} holds no queries", path.display())));
    }
    Ok(instances)
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path)
        .map_err(|e| Failure::usage(format!("cannot create output directory {}: {e}", path.display())))
}

/// The files `train` leaves in its output directory.
pub struct ModelDir {
    pub root: PathBuf,
    pub checkpoint: Option<(Checkpoint, String)>,
    pub scorer: Option<(PointwiseScorer, String)>,
    pub prm: Option<(Checkpoint, String)>,
}

fn load_text(path: &Path) -> Result<Option<(String, String)>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let hash = checkpoint_hash(&text).unwrap_or_default();
    Ok(Some((text, hash)))
}

impl ModelDir {
    pub fn open(root: &Path) -> Result<Self, Failure> {
        if !root.is_dir() {
            return Err(Failure::usage(format!("model directory {} does not exist", root.display())));
        }
        let bad = |p: &Path, e: divnet_core::DataError| Failure::runtime(format!("{}: {e}", p.display()));
        let path = root.join(CHECKPOINT_FILE);
        let checkpoint = match load_text(&path)? {
            Some((text, hash)) => Some((Checkpoint::load(&text).map_err(|e| bad(&path, e))?, hash)),
            None => None,
        };
        let spath = root.join(SCORER_FILE);
        let scorer = match load_text(&spath)? {
            Some((text, hash)) => Some((load_scorer(&text).map_err(|e| bad(&spath, e))?, hash)),
            None => None,
        };
        let ppath = root.join(PRM_FILE);
        let prm = match load_text(&ppath)? {
            Some((text, hash)) => Some((Checkpoint::load(&text).map_err(|e| bad(&ppath, e))?, hash)),
            None => None,
        };
        Ok(ModelDir {
            root: root.to_path_buf(),
            checkpoint,
            scorer,
            prm,
        })
    }

    pub fn divnet(&self) -> Result<&(Checkpoint, String), Failure> {
        self.checkpoint.as_ref().ok_or_else(|| {
            Failure::usage(format!("{} has no {CHECKPOINT_FILE}", self.root.display()))
        })
    }

    pub fn pointwise(&self) -> Result<&(PointwiseScorer, String), Failure> {
        self.scorer
            .as_ref()
            .ok_or_else(|| Failure::usage(format!("{} has no {SCORER_FILE}", self.root.display())))
    }

    pub fn prm(&self) -> Result<&(Checkpoint, String), Failure> {
        self.prm
            .as_ref()
            .ok_or_else(|| Failure::usage(format!("{} has no {PRM_FILE}", self.root.display())))
    }

    /// Feature width the stored models were trained on.
    pub fn item_dim(&self) -> Option<usize> {
        self.checkpoint
            .as_ref()
            .map(|(c, _)| c.params.config.item_dim)
            .or_else(|| self.prm.as_ref().map(|(c, _)| c.params.config.item_dim))
            .or_else(|| self.scorer.as_ref().map(|(s, _)| s.input_dim()))
    }

    /// Instances in upstream order (by the stored scorer, else file order),
    /// with each upstream order to map positions back to file rows.
    pub fn upstream(&self, instances: &[RankingInstance]) -> Result<(Vec<RankingInstance>, Vec<Vec<usize>>), Failure> {
        match &self.scorer {
            Some((scorer, _)) => upstream_lists(scorer, instances).map_err(dimension),
            None => Ok((
                instances.to_vec(),
                instances.iter().map(|i| (0..i.num_items()).collect()).collect(),
            )),
        }
    }
}

/// Shape mismatches between stored models and data are reported verbatim.
pub fn dimension(e: divnet_core::ModelError) -> Failure {
    Failure::runtime(e.to_string())
}
