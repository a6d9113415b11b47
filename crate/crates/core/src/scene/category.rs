use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category vocabulary with training-set frequencies.
///
/// Exactly one category is the door and one is the window; both are treated
/// as conditioning tokens placed at the start of every scene sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTable {
    names: Vec<String>,
    frequencies: Vec<u64>,
    door: usize,
    window: usize,
}

impl CategoryTable {
    pub fn new(names: Vec<String>, frequencies: Vec<u64>, door: usize, window: usize) -> Result<Self> {
        if names.len() != frequencies.len() {
            return Err(Error::invalid("category names and frequencies differ in length"));
        }
        if door >= names.len() || window >= names.len() || door == window {
            return Err(Error::invalid("door and window must be two distinct categories"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::invalid(format!("duplicate category `{dup}`")));
        }
        Ok(Self { names, frequencies, door, window })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, category: usize) -> &str {
        &self.names[category]
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    pub fn frequency(&self, category: usize) -> u64 {
        self.frequencies[category]
    }

    pub fn door(&self) -> usize {
        self.door
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn is_door(&self, category: usize) -> bool {
        category == self.door
    }

    pub fn is_window(&self, category: usize) -> bool {
        category == self.window
    }

    pub fn is_opening(&self, category: usize) -> bool {
        category == self.door || category == self.window
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    /// Categories that are ordinary furniture (neither door nor window).
    pub fn object_categories(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&c| !self.is_opening(c))
    }

    /// Sort key rank: door, window, then descending frequency, ties by index.
    pub(crate) fn rank_key(&self, category: usize) -> (u8, std::cmp::Reverse<u64>, usize) {
        let group = if self.is_door(category) {
            0
        } else if self.is_window(category) {
            1
        } else {
            2
        };
        (group, std::cmp::Reverse(self.frequencies[category]), category)
    }

    pub fn with_frequencies(&self, frequencies: Vec<u64>) -> Result<Self> {
        Self::new(self.names.clone(), frequencies, self.door, self.window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_bad_openings() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(CategoryTable::new(names(&["door", "window", "bed"]), vec![1, 1, 1], 0, 1).is_ok());
        assert!(CategoryTable::new(names(&["door", "door", "bed"]), vec![1, 1, 1], 0, 1).is_err());
        assert!(CategoryTable::new(names(&["door", "window", "bed"]), vec![1, 1, 1], 0, 0).is_err());
        assert!(CategoryTable::new(names(&["door", "window"]), vec![1], 0, 1).is_err());
    }

    #[test]
    fn index_lookup() {
        let t = CategoryTable::new(vec!["door".into(), "window".into(), "bed".into()], vec![3, 2, 9], 0, 1).unwrap();
        assert_eq!(t.index("bed").unwrap(), 2);
        assert!(matches!(t.index("sofa"), Err(Error::UnknownCategory(_))));
        assert_eq!(t.object_categories().collect::<Vec<_>>(), vec![2]);
    }
}
