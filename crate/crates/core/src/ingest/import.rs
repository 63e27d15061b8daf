use std::collections::BTreeMap;
use std::io::Read;

use thiserror::Error;

use crate::graph::{GraphError, Node, NodeId};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: GraphError,
    },
}

/// Reads nodes from CSV with header columns `id,label,class` in any order.
/// Every other column becomes an attribute; empty cells are skipped.
pub fn import_nodes_csv<R: Read>(reader: R) -> Result<Vec<Node>, ImportError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(ImportError::MissingColumn(name))
    };
    let (id_col, label_col, class_col) = (col("id")?, col("label")?, col("class")?);
    let mut nodes = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let get = |c: usize| row.get(c).unwrap_or_default();
        let id = NodeId::new(get(id_col)).map_err(|source| ImportError::Row { row: line, source })?;
        let mut attributes = BTreeMap::new();
        for (c, h) in headers.iter().enumerate() {
            if c != id_col && c != label_col && c != class_col && !get(c).is_empty() {
                attributes.insert(h.to_string(), get(c).to_string());
            }
        }
        let node = Node::new(id, get(label_col), get(class_col))
            .map_err(|source| ImportError::Row { row: line, source })?
            .with_attributes(attributes);
        nodes.push(node);
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_and_attributes() {
        let csv = "label,id,class,locale,source\nBirthday Card,n1,intent,en,\nlogo,n2,intent,,seo\n";
        let nodes = import_nodes_csv(csv.as_bytes()).unwrap();
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[0].id().as_str(), "n1");
        assert_eq!(nodes[0].normalized_label(), "birthday card");
        assert_eq!(nodes[0].attributes().get("locale").map(String::as_str), Some("en"));
        assert!(!nodes[0].attributes().contains_key("source"));
        assert_eq!(nodes[1].attributes().get("source").map(String::as_str), Some("seo"));
    }

    #[test]
    fn missing_column_and_bad_rows() {
        assert!(matches!(
            import_nodes_csv("id,label\nx,y\n".as_bytes()),
            Err(ImportError::MissingColumn("class"))
        ));
        assert!(matches!(
            import_nodes_csv("id,label,class\n,y,intent\n".as_bytes()),
            Err(ImportError::Row { row: 2, .. })
        ));
    }
}
