use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::tensor::{DType, TensorData};
use crate::interpreter::OpKind;

/// A node attribute value (hyperparameter).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
    Str(String),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            AttrValue::Float(v) => Some(*v),
            AttrValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            AttrValue::Ints(v) => Some(v),
            _ => None,
        }
    }
}

impl std::fmt::Display for AttrValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttrValue::Int(v) => write!(f, "{v}"),
            AttrValue::Float(v) => write!(f, "{v}"),
            AttrValue::Ints(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
            AttrValue::Str(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    #[serde(rename = "NCHW")]
    Nchw,
    #[serde(rename = "NHWC")]
    Nhwc,
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Nchw => "NCHW",
            Layout::Nhwc => "NHWC",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueInfo {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl ValueInfo {
    pub fn new(name: impl Into<String>, dtype: DType, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            dtype,
            shape,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub op_type: OpKind,
    pub attrs: BTreeMap<String, AttrValue>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, op_type: OpKind) -> Self {
        Self {
            id: id.into(),
            op_type,
            attrs: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: AttrValue) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    pub fn with_inputs<S: Into<String>>(mut self, inputs: impl IntoIterator<Item = S>) -> Self {
        self.inputs = inputs.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_output(mut self, output: impl Into<String>) -> Self {
        self.outputs = vec![output.into()];
        self
    }

    pub fn attr(&self, key: &str) -> Option<&AttrValue> {
        self.attrs.get(key)
    }

    /// The first output, which every op in the vocabulary produces.
    pub fn output(&self) -> &str {
        &self.outputs[0]
    }
}

/// A named DAG of operator nodes plus its parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub layout: Layout,
    pub inputs: Vec<ValueInfo>,
    pub outputs: Vec<ValueInfo>,
    pub nodes: Vec<NodeSpec>,
    pub initializers: BTreeMap<String, TensorData>,
    /// Free-form edit history; not part of structural equality.
    pub edit_log: Vec<String>,
}

impl ModelGraph {
    pub fn new(name: impl Into<String>, layout: Layout) -> Self {
        Self {
            name: name.into(),
            layout,
            inputs: Vec::new(),
            outputs: Vec::new(),
            nodes: Vec::new(),
            initializers: BTreeMap::new(),
            edit_log: Vec::new(),
        }
    }

    /// Equality of everything that affects execution: ignores `edit_log`.
    pub fn structurally_eq(&self, other: &ModelGraph) -> bool {
        self.name == other.name
            && self.layout == other.layout
            && self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.nodes == other.nodes
            && self.initializers == other.initializers
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn is_graph_input(&self, name: &str) -> bool {
        self.inputs.iter().any(|v| v.name == name)
    }

    pub fn is_graph_output(&self, name: &str) -> bool {
        self.outputs.iter().any(|v| v.name == name)
    }

    /// Value name -> index of the (first) node producing it.
    pub fn producers(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for out in &node.outputs {
                map.entry(out.as_str()).or_insert(i);
            }
        }
        map
    }

    /// Value name -> indices of nodes consuming it, in node-list order.
    pub fn consumers(&self) -> HashMap<&str, Vec<usize>> {
        let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for input in &node.inputs {
                let entry = map.entry(input.as_str()).or_default();
                if entry.last() != Some(&i) {
                    entry.push(i);
                }
            }
        }
        map
    }

    /// Stable topological order (Kahn's algorithm, ties broken by node-list
    /// position). Returns `None` if the graph has a cycle.
    ///
    /// A list that is already topologically sorted maps to `0..n`.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let producers = self.producers();
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            let mut seen = HashSet::new();
            for input in &node.inputs {
                if let Some(&p) = producers.get(input.as_str()) {
                    if seen.insert(p) {
                        indegree[i] += 1;
                        succ[p].push(i);
                    }
                }
            }
        }
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &s in &succ[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push(Reverse(s));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Undirected data-edge distance between two nodes, if connected.
    pub fn node_distance(&self, a: usize, b: usize) -> Option<usize> {
        if a == b {
            return Some(0);
        }
        let producers = self.producers();
        let consumers = self.consumers();
        let neighbours = |i: usize| -> Vec<usize> {
            let node = &self.nodes[i];
            let mut out: Vec<usize> = node
                .inputs
                .iter()
                .filter_map(|v| producers.get(v.as_str()).copied())
                .collect();
            for o in &node.outputs {
                if let Some(c) = consumers.get(o.as_str()) {
                    out.extend(c);
                }
            }
            out
        };
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[a] = 0;
        let mut queue = VecDeque::from([a]);
        while let Some(i) = queue.pop_front() {
            for j in neighbours(i) {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    if j == b {
                        return Some(dist[j]);
                    }
                    queue.push_back(j);
                }
            }
        }
        None
    }

    /// Names of initializers consumed by node `index`, with their input slots.
    pub fn node_initializers(&self, index: usize) -> Vec<(usize, &str)> {
        self.nodes[index]
            .inputs
            .iter()
            .enumerate()
            .filter(|(_, name)| self.initializers.contains_key(name.as_str()))
            .map(|(slot, name)| (slot, name.as_str()))
            .collect()
    }
}
