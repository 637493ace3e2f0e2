use serde::{Deserialize, Serialize};

/// Control laws of every controller at one common-information node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub t: usize,
    /// Joint messages written to the shared memory before step `t`.
    pub history: Vec<usize>,
    /// Node id within its step, as assigned by whoever produced the strategy.
    pub node: usize,
    /// `tables[i][y * |M^i_t| + m]` is the action of controller `i`.
    pub tables: Vec<Vec<usize>>,
}

/// A basic-model strategy `u^i_t = g^i_t(y, m, node)`, given on the
/// realizable common-information nodes only.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlStrategy {
    /// `stages[t]`, sorted by history.
    pub stages: Vec<Vec<StrategyEntry>>,
}

impl ControlStrategy {
    pub fn new(horizon: usize) -> Self {
        Self { stages: vec![Vec::new(); horizon] }
    }

    /// Inserts an entry; entries must be added before any lookup.
    pub fn push(&mut self, entry: StrategyEntry) {
        let t = entry.t;
        if self.stages.len() <= t {
            self.stages.resize(t + 1, Vec::new());
        }
        self.stages[t].push(entry);
    }

    /// Sorts every stage by history so lookups can bisect.
    pub fn finish(&mut self) {
        for stage in &mut self.stages {
            stage.sort_by(|a, b| a.history.cmp(&b.history));
        }
    }

    pub fn lookup(&self, t: usize, history: &[usize]) -> Option<&StrategyEntry> {
        let stage = self.stages.get(t)?;
        stage.binary_search_by(|e| e.history.as_slice().cmp(history)).ok().map(|k| &stage[k])
    }

    /// `g^i_t(y, m, history)` where `row = y * |M^i_t| + m`.
    pub fn action(&self, i: usize, t: usize, history: &[usize], row: usize) -> Option<usize> {
        self.lookup(t, history).and_then(|e| e.tables.get(i)).and_then(|table| table.get(row)).copied()
    }

    pub fn node_count(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_by_history() {
        let mut g = ControlStrategy::new(2);
        g.push(StrategyEntry { t: 1, history: vec![3], node: 1, tables: vec![vec![1, 0]] });
        g.push(StrategyEntry { t: 1, history: vec![1], node: 0, tables: vec![vec![0, 1]] });
        g.push(StrategyEntry { t: 0, history: vec![], node: 0, tables: vec![vec![1, 1]] });
        g.finish();
        assert_eq!(g.action(0, 1, &[1], 1), Some(1));
        assert_eq!(g.action(0, 1, &[3], 0), Some(1));
        assert_eq!(g.action(0, 1, &[2], 0), None);
        assert_eq!(g.action(0, 0, &[], 0), Some(1));
        assert_eq!(g.node_count(), 3);
    }
}
