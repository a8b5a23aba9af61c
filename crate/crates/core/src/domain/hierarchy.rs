use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::types::{HierarchyNode, LabelClass};
use super::DomainError;
use crate::ids::{LabelId, NodeId};

/// Nested on-disk form of `hierarchy.json`.
///
/// ```json
/// {"id": "root", "name": "All", "children": [
///   {"id": "vehicles", "name": "Vehicles", "children": [
///     {"id": "ground", "name": "Ground vehicles", "label": "ground_vehicle"}]}]}
/// ```
///
/// Leaves are labels; `label` defaults to the node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyDoc {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<HierarchyDoc>,
}

/// Validated category tree plus the labels hanging off its leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    root: NodeId,
    nodes: BTreeMap<NodeId, HierarchyNode>,
    labels: BTreeMap<LabelId, LabelClass>,
}

impl Default for Hierarchy {
    fn default() -> Self {
        Self::from_doc(&HierarchyDoc {
            id: "root".into(),
            name: "All".into(),
            label: None,
            children: vec![],
        })
        .expect("empty hierarchy is valid")
    }
}

impl Hierarchy {
    pub fn from_doc(doc: &HierarchyDoc) -> Result<Self, DomainError> {
        let mut h = Hierarchy {
            root: NodeId::new(doc.id.clone()),
            nodes: BTreeMap::new(),
            labels: BTreeMap::new(),
        };
        h.insert(doc, None, &mut Vec::new())?;
        Ok(h)
    }

    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        let doc: HierarchyDoc =
            serde_json::from_str(text).map_err(|e| DomainError::Validation(format!("hierarchy: {e}")))?;
        Self::from_doc(&doc)
    }

    fn insert(
        &mut self,
        doc: &HierarchyDoc,
        parent: Option<&NodeId>,
        path: &mut Vec<NodeId>,
    ) -> Result<(), DomainError> {
        let id = NodeId::new(doc.id.clone());
        if doc.id.is_empty() {
            return Err(DomainError::Validation("hierarchy node with empty id".into()));
        }
        if self.nodes.contains_key(&id) {
            return Err(DomainError::Validation(format!("duplicate hierarchy node `{id}`")));
        }
        let is_leaf = doc.children.is_empty();
        if !is_leaf && doc.label.is_some() {
            return Err(DomainError::Validation(format!(
                "node `{id}` has children and a label; labels belong on leaves"
            )));
        }
        // The root of a lone-node tree is not a label.
        let label_id = (is_leaf && parent.is_some())
            .then(|| LabelId::new(doc.label.clone().unwrap_or_else(|| doc.id.clone())));
        path.push(id.clone());
        if let Some(label_id) = &label_id {
            if self.labels.contains_key(label_id) {
                return Err(DomainError::Validation(format!("duplicate label `{label_id}`")));
            }
            self.labels.insert(
                label_id.clone(),
                LabelClass {
                    label_id: label_id.clone(),
                    name: doc.name.clone(),
                    hierarchy_path: path.clone(),
                },
            );
        }
        self.nodes.insert(
            id.clone(),
            HierarchyNode {
                node_id: id.clone(),
                name: doc.name.clone(),
                parent: parent.cloned(),
                children: doc.children.iter().map(|c| NodeId::new(c.id.clone())).collect(),
                label_id,
            },
        );
        for child in &doc.children {
            self.insert(child, Some(&id), path)?;
        }
        path.pop();
        Ok(())
    }

    pub fn to_doc(&self) -> HierarchyDoc {
        self.doc_for(&self.root)
    }

    fn doc_for(&self, id: &NodeId) -> HierarchyDoc {
        let node = &self.nodes[id];
        HierarchyDoc {
            id: id.0.clone(),
            name: node.name.clone(),
            label: node.label_id.as_ref().filter(|l| l.0 != id.0).map(|l| l.0.clone()),
            children: node.children.iter().map(|c| self.doc_for(c)).collect(),
        }
    }

    pub fn root(&self) -> &HierarchyNode {
        &self.nodes[&self.root]
    }

    pub fn node(&self, id: &NodeId) -> Option<&HierarchyNode> {
        self.nodes.get(id)
    }

    /// Immediate children in configured order; `None` means the root.
    pub fn children(&self, node: Option<&NodeId>) -> Result<Vec<HierarchyNode>, DomainError> {
        let parent = match node {
            None => self.root(),
            Some(id) => self.nodes.get(id).ok_or_else(|| DomainError::UnknownNode(id.clone()))?,
        };
        Ok(parent.children.iter().map(|c| self.nodes[c].clone()).collect())
    }

    pub fn label(&self, id: &LabelId) -> Option<&LabelClass> {
        self.labels.get(id)
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabelClass> {
        self.labels.values()
    }

    pub fn label_ids(&self) -> BTreeSet<LabelId> {
        self.labels.keys().cloned().collect()
    }
}

#[cfg(test)]
pub(crate) fn fixture() -> Hierarchy {
    Hierarchy::from_json(
        r#"{"id": "root", "name": "All objects", "children": [
            {"id": "vehicles", "name": "Vehicles", "children": [
                {"id": "airborne", "name": "Airborne vehicles", "label": "airborne_vehicles"},
                {"id": "ground", "name": "Ground vehicles", "label": "ground_vehicles"},
                {"id": "rotorcraft", "name": "Rotorcrafts", "label": "rotorcrafts"}
            ]}
        ]}"#,
    )
    .unwrap()
}
