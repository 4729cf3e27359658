use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CapacityRecord, EisCurve, EisDataError};

/// Disjoint train/test cell lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Partition {
    pub fn new(train: Vec<String>, test: Vec<String>) -> Result<Self, EisDataError> {
        let p = Self { train, test };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EisDataError> {
        let train: BTreeSet<&String> = self.train.iter().collect();
        if let Some(shared) = self.test.iter().find(|c| train.contains(c)) {
            return Err(EisDataError::Invalid(format!(
                "cell {shared} is in both the train and test partitions"
            )));
        }
        Ok(())
    }
}

/// Spectra grouped by `(cell_id, stage)` plus the capacity of every cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    curves: BTreeMap<(String, u8), Vec<EisCurve>>,
    capacities: BTreeMap<(String, u32), f64>,
    partition: Partition,
    stage_partitions: BTreeMap<u8, Partition>,
}

impl Dataset {
    /// Fails when a curve has no capacity record for its cycle, a
    /// `(cell, stage, cycle)` repeats, or the partition overlaps.
    pub fn new(
        curves: Vec<EisCurve>,
        capacities: Vec<CapacityRecord>,
        partition: Partition,
    ) -> Result<Self, EisDataError> {
        partition.validate()?;
        let mut caps = BTreeMap::new();
        for r in capacities {
            if !(r.capacity_mah > 0.0 && r.capacity_mah.is_finite()) {
                return Err(EisDataError::Invalid(format!(
                    "capacity of ({}, {}) must be positive",
                    r.cell_id, r.cycle
                )));
            }
            if caps.insert((r.cell_id.clone(), r.cycle), r.capacity_mah).is_some() {
                return Err(EisDataError::Invalid(format!(
                    "duplicate capacity record ({}, {})",
                    r.cell_id, r.cycle
                )));
            }
        }
        let mut grouped: BTreeMap<(String, u8), Vec<EisCurve>> = BTreeMap::new();
        for c in curves {
            c.validate()?;
            if !caps.contains_key(&(c.cell_id.clone(), c.cycle)) {
                return Err(EisDataError::Invalid(format!(
                    "curve {} has no capacity record",
                    c.key()
                )));
            }
            grouped.entry((c.cell_id.clone(), c.stage)).or_default().push(c);
        }
        for list in grouped.values_mut() {
            list.sort_by_key(|c| c.cycle);
            if let Some(w) = list.windows(2).find(|w| w[0].cycle == w[1].cycle) {
                return Err(EisDataError::Invalid(format!("duplicate curve {}", w[1].key())));
            }
        }
        Ok(Self {
            curves: grouped,
            capacities: caps,
            partition,
            stage_partitions: BTreeMap::new(),
        })
    }

    /// Overrides the partition for one stage, e.g. when a stage was only
    /// measured on some cells.
    pub fn with_stage_partition(mut self, stage: u8, partition: Partition) -> Result<Self, EisDataError> {
        partition.validate()?;
        self.stage_partitions.insert(stage, partition);
        Ok(self)
    }

    pub fn partition(&self, stage: u8) -> &Partition {
        self.stage_partitions.get(&stage).unwrap_or(&self.partition)
    }

    pub fn default_partition(&self) -> &Partition {
        &self.partition
    }

    pub fn set_partition(&mut self, partition: Partition) -> Result<(), EisDataError> {
        partition.validate()?;
        self.partition = partition;
        Ok(())
    }

    /// Curves of one cell at one stage, ordered by cycle.
    pub fn curves(&self, cell_id: &str, stage: u8) -> &[EisCurve] {
        self.curves
            .get(&(cell_id.to_string(), stage))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn stage_curves<'a>(&'a self, stage: u8, cells: &'a [String]) -> impl Iterator<Item = &'a EisCurve> + 'a {
        cells.iter().flat_map(move |c| self.curves(c, stage).iter())
    }

    pub fn capacity(&self, cell_id: &str, cycle: u32) -> Option<f64> {
        self.capacities.get(&(cell_id.to_string(), cycle)).copied()
    }

    pub fn cells(&self) -> BTreeSet<&str> {
        self.capacities.keys().map(|(c, _)| c.as_str()).collect()
    }

    pub fn stages(&self) -> BTreeSet<u8> {
        self.curves.keys().map(|(_, s)| *s).collect()
    }

    pub fn all_curves(&self) -> impl Iterator<Item = &EisCurve> {
        self.curves.values().flatten()
    }

    pub fn capacity_records(&self) -> Vec<CapacityRecord> {
        self.capacities
            .iter()
            .map(|((cell_id, cycle), &capacity_mah)| CapacityRecord {
                cell_id: cell_id.clone(),
                cycle: *cycle,
                capacity_mah,
            })
            .collect()
    }

    /// Checks that `stage` can be trained and evaluated: both partitions are
    /// non-empty and every listed cell has spectra at that stage.
    pub fn check_stage(&self, stage: u8) -> Result<(), EisDataError> {
        let p = self.partition(stage);
        if p.train.is_empty() || p.test.is_empty() {
            return Err(EisDataError::Invalid(format!(
                "stage {stage}: train and test partitions must both be non-empty"
            )));
        }
        for cell in p.train.iter().chain(&p.test) {
            if self.curves(cell, stage).is_empty() {
                return Err(EisDataError::Invalid(format!(
                    "stage {stage}: no spectra for cell {cell}"
                )));
            }
        }
        Ok(())
    }
}
