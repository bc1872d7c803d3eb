use crate::clustering::distance::levenshtein_chars;

#[derive(Debug, Clone)]
struct Node {
    item: usize,
    children: Vec<(usize, usize)>,
}

/// Metric tree over edit distance. Items are indices into a caller-owned
/// table of character sequences.
#[derive(Debug, Clone, Default)]
pub(crate) struct BkTree {
    nodes: Vec<Node>,
}

impl BkTree {
    pub fn insert(&mut self, item: usize, table: &[Vec<char>]) {
        if self.nodes.is_empty() {
            self.nodes.push(Node {
                item,
                children: Vec::new(),
            });
            return;
        }
        let key = &table[item];
        let mut cur = 0;
        loop {
            let d = levenshtein_chars(key, &table[self.nodes[cur].item]);
            if d == 0 {
                return;
            }
            match self.nodes[cur].children.iter().find(|(cd, _)| *cd == d) {
                Some(&(_, next)) => cur = next,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(Node {
                        item,
                        children: Vec::new(),
                    });
                    self.nodes[cur].children.push((d, id));
                    return;
                }
            }
        }
    }

    /// All `(item, distance)` pairs within `max_distance` of `query`, unordered.
    pub fn find(&self, query: &[char], max_distance: usize, table: &[Vec<char>]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(cur) = stack.pop() {
            let node = &self.nodes[cur];
            let d = levenshtein_chars(query, &table[node.item]);
            if d <= max_distance {
                out.push((node.item, d));
            }
            let lo = d.saturating_sub(max_distance);
            let hi = d + max_distance;
            stack.extend(
                node.children
                    .iter()
                    .filter(|(cd, _)| (lo..=hi).contains(cd))
                    .map(|&(_, c)| c),
            );
        }
        out
    }
}
