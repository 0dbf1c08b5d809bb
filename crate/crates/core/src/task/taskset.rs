use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::template::TaskTemplate;
use super::{parse_task, TaskError, TaskQuery};
use crate::table::{Schema, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub enum Member {
    Task(String),
    Template(String),
}

/// A named collection of tasks and templates, as stored in task-set files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSet {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    pub members: Vec<Member>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub domains: BTreeMap<String, Vec<Value>>,
}

impl TaskSet {
    pub fn from_json(text: &str) -> Result<TaskSet, TaskError> {
        let s: TaskSet = serde_json::from_str(text).map_err(|e| TaskError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if s.members.is_empty() {
            return Err(TaskError::Template(format!("task set {} has no members", s.name)));
        }
        Ok(s)
    }
}

/// Materializes every member. `domains` extend and override the set's own.
pub fn enumerate_task_set(
    set: &TaskSet,
    schema: Option<&Schema>,
    domains: &BTreeMap<String, Vec<Value>>,
) -> Result<Vec<TaskQuery>, TaskError> {
    let schema = schema.or(set.schema.as_ref());
    let mut merged = set.domains.clone();
    merged.extend(domains.iter().map(|(k, v)| (k.clone(), v.clone())));
    let mut out = Vec::new();
    for m in &set.members {
        match m {
            Member::Task(text) => out.push(parse_task(text, schema)?),
            Member::Template(text) => out.extend(TaskTemplate::parse(text, schema)?.enumerate(&merged)?),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T3: &str = r#"{
      "name": "T3",
      "schema": [{"name": "a", "type": "text"}, {"name": "b", "type": "number"}],
      "members": [{"template": "param g1 : value of a\nparam g2 : value of a\nparam op : op in {sum, difference}\npairs g1 g2\nx = percent_of b by a at a=$g1\ny = percent_of b by a at a=$g2\ncombine(x, $op, y)"}],
      "domains": {"a": ["A", "B", "C"]}
    }"#;

    #[test]
    fn t3_has_six_tasks() {
        let s = TaskSet::from_json(T3).unwrap();
        assert_eq!(enumerate_task_set(&s, None, &BTreeMap::new()).unwrap().len(), 6);
        let two = BTreeMap::from([("a".to_string(), vec![Value::text("A"), Value::text("B")])]);
        assert_eq!(enumerate_task_set(&s, None, &two).unwrap().len(), 2);
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(TaskSet::from_json(r#"{"name": "x", "members": []}"#).is_err());
    }
}
