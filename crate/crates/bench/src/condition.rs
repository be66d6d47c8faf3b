//! Who holds which tables under each experimental condition.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use segsql_core::agents::{AgentProfile, Reasoner};
use segsql_core::orchestrator::Condition;
use segsql_core::{partition_schema, PartitionMode, Schema, SchemaError};

use crate::dataset::DatasetBundle;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConditionError {
    #[error("condition {condition} runs with {expected} agent(s), not {requested}")]
    AgentCount {
        condition: Condition,
        expected: usize,
        requested: usize,
    },
    #[error("at least one agent is required")]
    NoAgents,
    #[error("database `{db_id}`: {source}")]
    Partition { db_id: String, source: SchemaError },
}

/// Private schemas for every database of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RosterBlueprint {
    pub condition: Condition,
    pub n_agents: usize,
    pub seed: u64,
    pub privates: BTreeMap<String, Vec<Schema>>,
}

impl RosterBlueprint {
    pub fn agent_ids(&self) -> Vec<String> {
        (0..self.n_agents).map(|i| format!("agent-{i}")).collect()
    }

    /// Agents for `db_id`, all backed by `backend`.
    pub fn roster(&self, db_id: &str, backend: &Arc<dyn Reasoner>) -> Option<Vec<AgentProfile>> {
        let parts = self.privates.get(db_id)?;
        Some(
            parts
                .iter()
                .zip(self.agent_ids())
                .map(|(s, id)| AgentProfile::new(id, s.clone(), backend.clone()))
                .collect(),
        )
    }
}

/// Agent count a condition requires, if it fixes one.
pub fn required_agents(condition: Condition) -> Option<usize> {
    match condition {
        Condition::OnePart | Condition::OneAll => Some(1),
        Condition::TwoPart | Condition::TwoAll => Some(2),
        Condition::Custom => None,
    }
}

pub fn make_condition(
    bundle: &DatasetBundle,
    condition: Condition,
    n_agents: usize,
    seed: u64,
) -> Result<RosterBlueprint, ConditionError> {
    if n_agents == 0 {
        return Err(ConditionError::NoAgents);
    }
    if let Some(expected) = required_agents(condition) {
        if expected != n_agents {
            return Err(ConditionError::AgentCount {
                condition,
                expected,
                requested: n_agents,
            });
        }
    }
    let mut privates = BTreeMap::new();
    for (db_id, full) in &bundle.schemas {
        let split = |parts, mode| {
            partition_schema(full, parts, mode, seed).map_err(|source| ConditionError::Partition {
                db_id: db_id.clone(),
                source,
            })
        };
        let parts = match condition {
            Condition::OnePart => split(1, PartitionMode::HalfToOne)?,
            Condition::OneAll => vec![full.clone()],
            Condition::TwoAll => vec![full.clone(), full.clone()],
            Condition::TwoPart => split(2, PartitionMode::EqualSplit)?,
            Condition::Custom => split(n_agents, PartitionMode::EqualSplit)?,
        };
        privates.insert(db_id.clone(), parts);
    }
    Ok(RosterBlueprint {
        condition,
        n_agents,
        seed,
        privates,
    })
}
