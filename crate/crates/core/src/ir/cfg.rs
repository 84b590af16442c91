//! Control-flow graph, dominator and postdominator trees, natural loops.

use std::collections::BTreeSet;

use super::{Function, TermKind};

#[derive(Clone, Debug)]
pub struct Cfg {
    pub labels: Vec<String>,
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
    /// Immediate dominator; `idom[0] == 0`, unreachable blocks hold `None`.
    pub idom: Vec<Option<usize>>,
    /// Immediate postdominator; `None` for exit blocks (virtual exit) and
    /// blocks that cannot reach an exit.
    pub ipdom: Vec<Option<usize>>,
    pub reachable: Vec<bool>,
    pub reducible: bool,
}

/// A natural loop identified by its header and single latch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NaturalLoop {
    pub header: usize,
    pub latches: Vec<usize>,
    pub body: BTreeSet<usize>,
}

impl Cfg {
    pub fn build(f: &Function) -> Self {
        let labels: Vec<String> = f.blocks.iter().map(|b| b.label.clone()).collect();
        let n = labels.len();
        let index = |l: &str| labels.iter().position(|x| x == l);
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for (i, b) in f.blocks.iter().enumerate() {
            for s in b.term.successors() {
                if let Some(j) = index(s) {
                    succs[i].push(j);
                    if !preds[j].contains(&i) {
                        preds[j].push(i);
                    }
                }
            }
        }
        let exits: Vec<usize> = f
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| matches!(b.term.kind, TermKind::Ret(_)))
            .map(|(i, _)| i)
            .collect();

        let rpo = reverse_postorder(n, 0, &succs);
        let mut reachable = vec![false; n];
        for &b in &rpo {
            reachable[b] = true;
        }
        let idom = dominators(n, &[0], &rpo, &preds);

        // Postdominators: dominators on the reversed graph rooted at a virtual exit.
        let vexit = n;
        let mut rsuccs: Vec<Vec<usize>> = preds.clone();
        rsuccs.push(exits.clone());
        let mut rpreds: Vec<Vec<usize>> = succs.clone();
        for &e in &exits {
            rpreds[e].push(vexit);
        }
        rpreds.push(Vec::new());
        let rrpo = reverse_postorder(n + 1, vexit, &rsuccs);
        let pd = dominators(n + 1, &[vexit], &rrpo, &rpreds);
        let ipdom = (0..n).map(|b| pd[b].filter(|&p| p != vexit)).collect();

        let reducible = is_reducible(n, &succs, &idom, &reachable);
        Cfg { labels, succs, preds, idom, ipdom, reachable, reducible }
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn dominates(&self, a: usize, mut b: usize) -> bool {
        if !self.reachable[b] {
            return false;
        }
        loop {
            if a == b {
                return true;
            }
            match self.idom[b] {
                Some(p) if p != b => b = p,
                _ => return false,
            }
        }
    }

    pub fn postdominates(&self, a: usize, mut b: usize) -> bool {
        loop {
            if a == b {
                return true;
            }
            match self.ipdom[b] {
                Some(p) => b = p,
                None => return false,
            }
        }
    }

    /// Nearest common postdominator of `a` and `b`.
    pub fn common_postdominator(&self, a: usize, b: usize) -> Option<usize> {
        let mut chain = vec![a];
        let mut x = a;
        while let Some(p) = self.ipdom[x] {
            chain.push(p);
            x = p;
        }
        let mut y = b;
        loop {
            if chain.contains(&y) {
                return Some(y);
            }
            y = self.ipdom[y]?;
        }
    }

    /// Natural loops, one per header, in block order.
    pub fn loops(&self) -> Vec<NaturalLoop> {
        let n = self.labels.len();
        let mut out: Vec<NaturalLoop> = Vec::new();
        for h in 0..n {
            let latches: Vec<usize> = self.preds[h]
                .iter()
                .copied()
                .filter(|&p| self.reachable[p] && self.dominates(h, p))
                .collect();
            if latches.is_empty() {
                continue;
            }
            let mut body = BTreeSet::from([h]);
            let mut stack: Vec<usize> = latches.clone();
            while let Some(x) = stack.pop() {
                if body.insert(x) {
                    stack.extend(self.preds[x].iter().copied().filter(|&p| self.reachable[p]));
                }
            }
            out.push(NaturalLoop { header: h, latches, body });
        }
        out
    }

    /// Blocks reachable from `start` without passing through `stop`.
    pub fn reach_until(&self, start: usize, stop: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            if x == stop || !seen.insert(x) {
                continue;
            }
            stack.extend(self.succs[x].iter().copied());
        }
        seen
    }
}

fn reverse_postorder(n: usize, root: usize, succs: &[Vec<usize>]) -> Vec<usize> {
    let mut visited = vec![false; n];
    let mut post = Vec::with_capacity(n);
    // Iterative DFS with an explicit successor cursor.
    let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
    visited[root] = true;
    while let Some((node, cursor)) = stack.pop() {
        if cursor < succs[node].len() {
            stack.push((node, cursor + 1));
            let s = succs[node][cursor];
            if !visited[s] {
                visited[s] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(node);
        }
    }
    post.reverse();
    post
}

/// Cooper–Harvey–Kennedy iterative dominators.
fn dominators(n: usize, roots: &[usize], rpo: &[usize], preds: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut order = vec![usize::MAX; n];
    for (i, &b) in rpo.iter().enumerate() {
        order[b] = i;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    for &r in roots {
        idom[r] = Some(r);
    }
    let intersect = |idom: &Vec<Option<usize>>, mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].unwrap();
            }
            while order[b] > order[a] {
                b = idom[b].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo {
            if roots.contains(&b) {
                continue;
            }
            let mut new: Option<usize> = None;
            for &p in &preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom
}

fn is_reducible(n: usize, succs: &[Vec<usize>], idom: &[Option<usize>], reachable: &[bool]) -> bool {
    // A CFG is reducible iff every DFS retreating edge targets a dominator of its source.
    let dominates = |a: usize, mut b: usize| loop {
        if a == b {
            return true;
        }
        match idom[b] {
            Some(p) if p != b => b = p,
            _ => return false,
        }
    };
    let mut state = vec![0u8; n]; // 0 new, 1 on stack, 2 done
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    state[0] = 1;
    while let Some((node, cursor)) = stack.pop() {
        if cursor < succs[node].len() {
            stack.push((node, cursor + 1));
            let s = succs[node][cursor];
            match state[s] {
                0 => {
                    state[s] = 1;
                    stack.push((s, 0));
                }
                1 if !dominates(s, node) => return false,
                _ => {}
            }
        } else {
            state[node] = 2;
        }
    }
    let _ = reachable;
    true
}
