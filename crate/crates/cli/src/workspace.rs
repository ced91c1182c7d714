use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use stancealign::experiments::DataBundle;
use stancealign::sft::{read_arguments, BiasTag};
use stancealign::survey::{Dataset, RecodingScheme, Split, Survey};

/// File layout under the data directory and the results root.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub data: PathBuf,
    pub results: PathBuf,
}

impl Workspace {
    pub fn dataset(&self, s: Survey) -> PathBuf {
        self.data.join(format!("{s}.json"))
    }

    pub fn variant(&self, s: Survey, scheme: RecodingScheme) -> PathBuf {
        self.data.join(format!("{s}.{}.json", scheme.key()))
    }

    pub fn split(&self, s: Survey) -> PathBuf {
        self.data.join(format!("{s}.split.json"))
    }

    pub fn arguments(&self, s: Survey, tag: BiasTag) -> PathBuf {
        self.data.join("arguments").join(format!("{s}.{}.jsonl", tag.name()))
    }

    pub fn sft_dir(&self, s: Survey, tag: BiasTag) -> PathBuf {
        self.data.join("sft").join(s.name()).join(tag.name())
    }

    pub fn population(&self) -> PathBuf {
        self.data.join("smartvote.population.json")
    }

    pub fn manifests(&self) -> PathBuf {
        self.results.join("manifests")
    }

    pub fn reports(&self) -> PathBuf {
        self.results.join("reports")
    }

    pub fn load_dataset(&self, s: Survey) -> Result<Dataset> {
        let p = self.dataset(s);
        Dataset::load(&p, Some(s)).with_context(|| format!("loading {}; run `ingest` first", p.display()))
    }

    pub fn load_split(&self, s: Survey) -> Result<Split> {
        let p = self.split(s);
        Split::load(&p).with_context(|| format!("loading {}; run `split` first", p.display()))
    }

    /// Dataset, split and whichever of `tags` have a corpus on disk.
    pub fn load_bundle(&self, s: Survey, tags: &[BiasTag]) -> Result<DataBundle> {
        let mut b = DataBundle::new(self.load_dataset(s)?, self.load_split(s)?)?;
        for t in tags {
            let p = self.arguments(s, *t);
            if p.exists() {
                b.arguments.insert(*t, read_arguments(&p)?);
            }
        }
        Ok(b)
    }

    /// Every survey with both a dataset and a split on disk.
    pub fn available_bundles(&self, tags: &[BiasTag]) -> Result<BTreeMap<Survey, DataBundle>> {
        let mut out = BTreeMap::new();
        for s in [Survey::Smartvote, Survey::Wom, Survey::Anes] {
            if self.dataset(s).exists() && self.split(s).exists() {
                out.insert(s, self.load_bundle(s, tags)?);
            }
        }
        Ok(out)
    }

    pub fn load_population(&self) -> Result<Option<Dataset>> {
        let p = self.population();
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(Dataset::load(&p, Some(Survey::Smartvote))?))
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
