use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::PolicyError;

/// Acyclic superior ≻ subordinate relation over role names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoleHierarchy {
    superiors: BTreeMap<String, BTreeSet<String>>,
}

impl RoleHierarchy {
    pub fn new<I, S>(edges: I) -> Result<Self, PolicyError>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut superiors: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (sup, sub) in edges {
            superiors.entry(sub.into()).or_default().insert(sup.into());
        }
        let h = Self { superiors };
        if let Some(role) = h.find_cycle() {
            return Err(PolicyError::CyclicHierarchy(role));
        }
        Ok(h)
    }

    fn find_cycle(&self) -> Option<String> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        fn visit<'a>(
            h: &'a RoleHierarchy,
            role: &'a str,
            marks: &mut BTreeMap<&'a str, Mark>,
        ) -> Option<String> {
            match marks.get(role) {
                Some(Mark::Active) => return Some(role.to_string()),
                Some(Mark::Done) => return None,
                None => {}
            }
            marks.insert(role, Mark::Active);
            if let Some(sups) = h.superiors.get(role) {
                for s in sups {
                    if let Some(found) = visit(h, s, marks) {
                        return Some(found);
                    }
                }
            }
            marks.insert(role, Mark::Done);
            None
        }
        let mut marks = BTreeMap::new();
        self.superiors
            .keys()
            .find_map(|r| visit(self, r, &mut marks))
    }

    /// `role` together with every transitive superior of it.
    pub fn dominating(&self, role: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::from([role.to_string()]);
        let mut queue = VecDeque::from([role.to_string()]);
        while let Some(r) = queue.pop_front() {
            if let Some(sups) = self.superiors.get(&r) {
                for s in sups {
                    if out.insert(s.clone()) {
                        queue.push_back(s.clone());
                    }
                }
            }
        }
        out
    }

    pub fn satisfies(&self, held: &BTreeSet<String>, required: &str) -> bool {
        if held.contains(required) {
            return true;
        }
        self.dominating(required).iter().any(|r| held.contains(r))
    }

    pub fn roles(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for (sub, sups) in &self.superiors {
            out.insert(sub.as_str());
            out.extend(sups.iter().map(String::as_str));
        }
        out
    }
}
