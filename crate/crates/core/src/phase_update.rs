//! Update phase: the clean list becomes live by relabelling ports. No
//! message is sent and no link is formed or dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::simcore::{Fabric, SimError};
use crate::skiplist::{Edge, SkipList};

/// Two-bit port label: (in clean, in live).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub clean: bool,
    pub live: bool,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", u8::from(self.clean), u8::from(self.live))
    }
}

/// Labels of every edge in either list.
pub fn labels(live: &SkipList, clean: &SkipList) -> BTreeMap<Edge, Label> {
    let mut out: BTreeMap<Edge, Label> = BTreeMap::new();
    for e in clean.edges() {
        out.entry(e)
            .or_insert(Label {
                clean: false,
                live: false,
            })
            .clean = true;
    }
    for e in live.edges() {
        out.entry(e)
            .or_insert(Label {
                clean: false,
                live: false,
            })
            .live = true;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UpdateError {
    #[error("live-only edge {0:?} was never retired")]
    DirtyLabels(Edge),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub cycle: u64,
    pub labels_flipped: u64,
}

/// Flips every "10" port to "11". Live-only edges must already have been
/// retired (dropped from the clean list earlier this cycle); anything else
/// is a "01" label that should not exist.
pub fn update_phase(
    live: &mut SkipList,
    clean: &SkipList,
    retired: &BTreeSet<Edge>,
    fabric: &mut dyn Fabric,
    cycle: u64,
) -> Result<UpdateRecord, UpdateError> {
    let mut flipped = 0;
    for (e, l) in labels(live, clean) {
        match (l.clean, l.live) {
            (true, false) => flipped += 1,
            (false, true) if !retired.contains(&e) => return Err(UpdateError::DirtyLabels(e)),
            _ => {}
        }
    }
    *live = clean.clone();
    fabric.barrier()?;
    Ok(UpdateRecord {
        cycle,
        labels_flipped: flipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key::Key;
    use crate::simcore::LocalFabric;

    #[test]
    fn fixpoint_is_noop() {
        let c = SkipList::oracle_build(&[1, 2, 3], &[0, 1, 0]).unwrap();
        let mut l = c.clone();
        let mut f = LocalFabric::new();
        let r = update_phase(&mut l, &c, &BTreeSet::new(), &mut f, 0).unwrap();
        assert_eq!(r.labels_flipped, 0);
        assert_eq!((f.round, f.work), (1, Default::default()));
    }

    #[test]
    fn fresh_edges_flip() {
        let mut l = SkipList::oracle_build(&[1, 3], &[0, 0]).unwrap();
        let mut c = l.clone();
        c.start_journal();
        c.oracle_insert(Key::Id(2), 0);
        let retired: BTreeSet<Edge> = c.stop_journal().removed.into_iter().collect();
        let mut f = LocalFabric::new();
        let r = update_phase(&mut l, &c, &retired, &mut f, 3).unwrap();
        assert_eq!(
            r,
            UpdateRecord {
                cycle: 3,
                labels_flipped: 2
            }
        );
        assert_eq!(l.edges(), c.edges());
        assert!(labels(&l, &c).values().all(|x| x.to_string() == "11"));
    }

    #[test]
    fn unretired_live_edge_is_dirty() {
        let mut l = SkipList::oracle_build(&[1, 3], &[0, 0]).unwrap();
        let mut c = l.clone();
        c.oracle_insert(Key::Id(2), 0);
        let err =
            update_phase(&mut l, &c, &BTreeSet::new(), &mut LocalFabric::new(), 0).unwrap_err();
        assert!(matches!(err, UpdateError::DirtyLabels(_)));
    }
}
