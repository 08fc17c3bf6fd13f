/// Disjoint sets over `0..n` where every set is rooted at its smallest
/// member.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; the smaller root survives.
    pub fn union_to_min(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop] = keep;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chains_merge_to_the_smallest_root() {
        let mut uf = UnionFind::new(6);
        assert!(uf.union_to_min(4, 5));
        assert!(uf.union_to_min(5, 2));
        assert!(!uf.union_to_min(2, 4));
        assert_eq!(uf.find(4), 2);
        assert_eq!(uf.find(5), 2);
        assert_eq!(uf.find(0), 0);
        uf.union_to_min(0, 5);
        assert_eq!(uf.find(2), 0);
    }
}
