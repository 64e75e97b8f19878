//! Browser bindings: generate a planar graph, query suffix predictions from a
//! clicked node and draw sampled walks.

use pathwalk::baselines::{reweighted_weights, uniform_weights};
use pathwalk::data::planar::{generate_planar, PlanarConfig};
use pathwalk::graph::{Graph, NodeDistribution, PathSample};
use pathwalk::nbwalk::{most_likely_suffix, sample_suffix_seeded, target_marginal, LatentGraph, MarginalMode, SampleOutcome};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Edge weighting used by the demo walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Model {
    Uniform,
    RandomWalk,
    Reweighted,
}

impl Model {
    fn parse(name: &str) -> Result<Self, String> {
        match name {
            "uniform" => Ok(Self::Uniform),
            "random-walk" => Ok(Self::RandomWalk),
            "reweighted" => Ok(Self::Reweighted),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

#[wasm_bindgen]
pub struct Demo {
    graph: Graph,
    coords: Vec<[f64; 2]>,
    paths: Vec<PathSample>,
    model: Model,
}

#[wasm_bindgen]
impl Demo {
    /// Random planar k-NN graph with `n_trajectories` straight-line paths,
    /// which feed the reweighted model.
    #[wasm_bindgen(constructor)]
    pub fn new(n_points: usize, knn: usize, n_trajectories: usize, seed: u32) -> Result<Demo, String> {
        let config = PlanarConfig { n_points, knn, n_trajectories, seed: seed.into(), ..PlanarConfig::default() };
        let data = generate_planar(&config).map_err(|e| e.to_string())?;
        let paths = data.paths.into_iter().map(|p| PathSample::new(&data.graph, p)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        Ok(Demo { graph: data.graph, coords: data.coords, paths, model: Model::Uniform })
    }

    #[wasm_bindgen(js_name = nodeCount)]
    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Node positions as a flat `[x0, y0, x1, y1, ...]` array in the unit square.
    pub fn coords(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    /// Undirected links as a flat `[a0, b0, a1, b1, ...]` array, each pair once.
    pub fn links(&self) -> Vec<u32> {
        self.graph.edges().iter().filter(|(a, b)| a < b).flat_map(|&(a, b)| [a as u32, b as u32]).collect()
    }

    #[wasm_bindgen(js_name = setModel)]
    pub fn set_model(&mut self, name: &str) -> Result<(), String> {
        self.model = Model::parse(name)?;
        Ok(())
    }

    /// JSON `{"marginal": [..], "best": [..] | null, "loglik": f64 | null}` for
    /// a walk of `h` steps from `node`.
    pub fn predict(&self, node: usize, h: usize) -> Result<String, String> {
        let lat = self.latent()?;
        self.graph.check_node(node).map_err(|e| e.to_string())?;
        let x = NodeDistribution::dirac(node);
        let marginal = target_marginal(&lat, &x, h, MarginalMode::Exact).map_err(|e| e.to_string())?;
        let (best, loglik) = match most_likely_suffix(&lat, node, h) {
            Ok((path, ll)) => (Some(path.nodes().to_vec()), Some(ll)),
            Err(_) => (None, None),
        };
        Ok(json!({ "marginal": marginal, "best": best, "loglik": loglik }).to_string())
    }

    /// JSON `{"nodes": [..], "dead_end": bool}` for one seeded walk; `nodes`
    /// starts at `node` and holds every node reached.
    pub fn sample(&self, node: usize, h: usize, seed: u32) -> Result<String, String> {
        let lat = self.latent()?;
        self.graph.check_node(node).map_err(|e| e.to_string())?;
        let outcome = sample_suffix_seeded(&lat, &NodeDistribution::dirac(node), h, seed.into()).map_err(|e| e.to_string())?;
        let (nodes, dead_end) = match outcome {
            SampleOutcome::Path { start, suffix } => ([vec![start], suffix.nodes().to_vec()].concat(), false),
            SampleOutcome::DeadEnd { start, .. } => (vec![start], true),
        };
        Ok(json!({ "nodes": nodes, "dead_end": dead_end }).to_string())
    }
}

impl Demo {
    fn latent(&self) -> Result<LatentGraph<'_>, String> {
        match self.model {
            Model::Uniform => Ok(uniform_weights(&self.graph, false)),
            Model::RandomWalk => Ok(uniform_weights(&self.graph, true)),
            Model::Reweighted => reweighted_weights(&self.graph, &self.paths, 1.0).map_err(|e| e.to_string()),
        }
    }
}
