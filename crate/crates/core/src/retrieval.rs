//! Reference-task lookup by task-text similarity. Exact linear scan.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::embed::{cosine, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::graph::TaskGraph;
use crate::mining::ShortcutLibrary;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub task_id: String,
    pub task_text: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    entries: Vec<IndexEntry>,
    dimension: usize,
}

impl ReferenceIndex {
    pub fn build<'a>(
        tasks: impl IntoIterator<Item = (&'a str, &'a str)>,
        embedder: &dyn Embedder,
    ) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut entries = Vec::new();
        for (id, text) in tasks {
            if !ids.insert(id.to_string()) {
                return Err(Error::Index(format!("duplicate task id `{id}`")));
            }
            entries.push(IndexEntry {
                task_id: id.to_string(),
                task_text: text.to_string(),
                embedding: embedder.embed(text)?,
            });
        }
        let dimension = entries
            .first()
            .map(|e| e.embedding.dimension())
            .ok_or_else(|| Error::Index("no tasks to index".into()))?;
        if entries.iter().any(|e| e.embedding.dimension() != dimension) {
            return Err(Error::Index("embeddings disagree on dimension".into()));
        }
        Ok(ReferenceIndex { entries, dimension })
    }

    /// One entry per training graph.
    pub fn from_graphs(graphs: &[TaskGraph], embedder: &dyn Embedder) -> Result<Self> {
        Self::build(
            graphs.iter().map(|g| (g.task_id.as_str(), g.task_text.as_str())),
            embedder,
        )
    }

    /// One entry per task that contributed shortcuts to the library.
    pub fn from_library(library: &ShortcutLibrary, embedder: &dyn Embedder) -> Result<Self> {
        Self::build(
            library
                .tasks
                .values()
                .map(|t| (t.task_id.as_str(), t.task_text.as_str())),
            embedder,
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Top-`k` tasks by cosine similarity, descending; ties go to the smaller task id.
    pub fn retrieve_embedding(&self, query: &Embedding, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let mut scored = self
            .entries
            .iter()
            .map(|e| Ok((e.task_id.clone(), cosine(query, &e.embedding)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored)
    }

    pub fn retrieve(&self, task_text: &str, k: usize, embedder: &dyn Embedder) -> Result<Vec<(String, f64)>> {
        self.retrieve_embedding(&embedder.embed(task_text)?, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;

    const TASKS: [(&str, &str); 4] = [
        ("blur", "background blur editor for photos"),
        ("clock", "alarm clock with snooze"),
        ("todo", "todo list with due dates"),
        ("zz-clock", "alarm clock with snooze"),
    ];

    fn index() -> ReferenceIndex {
        ReferenceIndex::build(TASKS, &HashEmbedder::default()).unwrap()
    }

    #[test]
    fn one_entry_per_task() {
        assert_eq!(ReferenceIndex::build(TASKS[..3].iter().copied(), &HashEmbedder::default()).unwrap().len(), 3);
    }

    #[test]
    fn duplicate_and_empty_inputs_fail() {
        let dup = [("a", "x"), ("a", "y")];
        assert!(matches!(ReferenceIndex::build(dup, &HashEmbedder::default()), Err(Error::Index(_))));
        assert!(matches!(
            ReferenceIndex::build(std::iter::empty(), &HashEmbedder::default()),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn self_query_ranks_first() {
        let e = HashEmbedder::default();
        let hits = index().retrieve("todo list with due dates", 1, &e).unwrap();
        assert_eq!(hits[0].0, "todo");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_task_id() {
        let e = HashEmbedder::default();
        let hits = index().retrieve("alarm clock with snooze", 2, &e).unwrap();
        assert_eq!(hits[0].0, "clock");
        assert_eq!(hits[1].0, "zz-clock");
    }

    #[test]
    fn k_larger_than_index_returns_all() {
        let e = HashEmbedder::default();
        assert_eq!(index().retrieve("photo", 99, &e).unwrap().len(), 4);
        assert!(matches!(index().retrieve("photo", 0, &e), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ranking_matches_brute_force_scan() {
        let e = HashEmbedder::default();
        let idx = index();
        for query in ["photo blur", "snooze alarm dates", "list editor", ""] {
            let q = e.embed(query).unwrap();
            let mut brute: Vec<(String, f64)> = TASKS
                .iter()
                .map(|(id, text)| {
                    let v = e.embed(text).unwrap();
                    let dot: f64 = q.components.iter().zip(&v.components).map(|(a, b)| a * b).sum();
                    let n = q.norm() * v.norm();
                    (id.to_string(), if n == 0.0 { 0.0 } else { dot / n })
                })
                .collect();
            brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let got = idx.retrieve(query, 4, &e).unwrap();
            for (g, b) in got.iter().zip(&brute) {
                assert_eq!(g.0, b.0);
                assert!((g.1 - b.1).abs() < 1e-12);
            }
            assert!(got.windows(2).all(|w| w[0].1 >= w[1].1));
        }
    }
}
