//! The 50-item product catalog: JSON loading, validation and conversion to
//! simulator item specs. The shipped dataset is embedded in the binary.

use crate::env::ItemSpec;
use crate::error::{Error, Result};
use crate::stochastic::{DemandModel, LeadTimeModel};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One catalog row: stochastic parameters and unit costs of a product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub id: u32,
    /// Probability of a nonzero-demand period.
    pub b: f64,
    /// Conditional Poisson demand mean.
    pub mu: f64,
    /// Geometric lead-time success probability.
    pub p: f64,
    pub cost_order: f64,
    pub cost_hold: f64,
    pub cost_short: f64,
}

impl CatalogRecord {
    pub fn to_item_spec(&self) -> Result<ItemSpec> {
        let spec = ItemSpec {
            id: self.id,
            demand: DemandModel::new(self.b, self.mu)
                .map_err(|e| Error::Parse(format!("item {}: field b/mu: {e}", self.id)))?,
            lead: LeadTimeModel::new(self.p)
                .map_err(|e| Error::Parse(format!("item {}: field p: {e}", self.id)))?,
            cost_order: self.cost_order,
            cost_hold: self.cost_hold,
            cost_short: self.cost_short,
            volume: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemCatalog {
    pub records: Vec<CatalogRecord>,
}

const BUILTIN_JSON: &str = include_str!("../data/items.json");

impl ItemCatalog {
    /// The embedded 50-item dataset.
    pub fn builtin() -> Self {
        let cat: Self = serde_json::from_str(BUILTIN_JSON).expect("embedded catalog parses");
        cat.validate().expect("embedded catalog valid");
        cat
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (row, r) in self.records.iter().enumerate() {
            if !seen.insert(r.id) {
                return Err(Error::Parse(format!(
                    "row {row}: duplicate item id {}",
                    r.id
                )));
            }
            r.to_item_spec()
                .map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        }
        Ok(())
    }

    pub fn get(&self, id: u32) -> Result<&CatalogRecord> {
        self.records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Config(format!("item id {id} not in catalog")))
    }

    /// Item specs for a list of ids, preserving order.
    pub fn item_specs(&self, ids: &[u32]) -> Result<Vec<ItemSpec>> {
        ids.iter().map(|&id| self.get(id)?.to_item_spec()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// Parse a catalog file, reporting the offending row and field on failure.
pub fn load_catalog(path: &Path) -> Result<ItemCatalog> {
    let text = std::fs::read_to_string(path)?;
    let cat: ItemCatalog = serde_json::from_str(&text).map_err(|e| {
        Error::Parse(format!("{}: {e}", path.display()))
    })?;
    cat.validate()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(cat)
}
