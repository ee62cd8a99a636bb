//! Shared test oracles, independent of the library's implementation paths.

#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;

use riskloc::grid::{Cell, GridMap};
use riskloc::nn::{NnError, ParameterStore};

/// Flood-fill distance map over free cells. Deliberately structured
/// differently from the navigation BFS: hash-map frontier, no parents.
pub fn flood_fill(map: &GridMap, from: Cell) -> HashMap<Cell, usize> {
    let mut dist = HashMap::new();
    let mut frontier = VecDeque::new();
    dist.insert(from, 0usize);
    frontier.push_back(from);
    while let Some(cell) = frontier.pop_front() {
        let d = dist[&cell];
        let deltas: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        for (dr, dc) in deltas {
            let row = cell.row as i64 + dr;
            let col = cell.col as i64 + dc;
            if !map.in_bounds(row, col) {
                continue;
            }
            let next = Cell::new(row as usize, col as usize);
            if !map.is_free(next) || dist.contains_key(&next) {
                continue;
            }
            dist.insert(next, d + 1);
            frontier.push_back(next);
        }
    }
    dist
}

/// Flood-fill distance from `from` to the nearest of `goals`.
pub fn flood_fill_distance(map: &GridMap, from: Cell, goals: &[Cell]) -> Option<usize> {
    let dist = flood_fill(map, from);
    goals.iter().filter_map(|g| dist.get(g)).min().copied()
}

pub fn map_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../maps")
        .join(name)
}

pub fn load_bundled_map(name: &str) -> GridMap {
    let text = std::fs::read_to_string(map_path(name))
        .unwrap_or_else(|e| panic!("reading {name}: {e}"));
    riskloc::grid::load_map(&text).unwrap_or_else(|e| panic!("parsing {name}: {e}"))
}

/// Central finite differences of `loss` with respect to every scalar in the
/// store, compared against the analytic gradients already accumulated in
/// `grads`. Returns the worst relative error and its parameter name.
pub fn max_gradient_error(
    store: &mut ParameterStore,
    grads: &HashMap<String, Vec<f64>>,
    mut loss: impl FnMut(&ParameterStore) -> Result<f64, NnError>,
    h: f64,
) -> (f64, String) {
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    let mut worst = (0.0f64, String::new());
    for name in names {
        let id = store.id(&name).unwrap();
        let len = store.value(id).len();
        for j in 0..len {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + h;
            let up = loss(store).unwrap();
            store.value_mut(id).data_mut()[j] = orig - h;
            let down = loss(store).unwrap();
            store.value_mut(id).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let analytic = grads[&name][j];
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            let rel = (analytic - fd).abs() / denom;
            if rel > worst.0 {
                worst = (rel, format!("{name}[{j}]"));
            }
        }
    }
    worst
}
