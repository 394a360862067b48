//! Model management operators: the only way a model changes.
//!
//! An operator is a typed parameter list plus a sequence of primitive
//! steps. The three built-ins (`create_element`, `delete_element`,
//! `set_property`) are ordinary single-step operators; languages may add
//! their own composed from the same primitives.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelElement, ModelError, ModelProperty, ModelingLanguage, WriteStamp};
use crate::value::{Value, ValueSchema};

pub const BUILTIN_OPERATORS: [&str; 3] = ["create_element", "delete_element", "set_property"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorDef {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, ValueSchema>,
    pub steps: Vec<OperatorStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum OperatorStep {
    CreateElement {
        element: Arg,
        kind: Arg,
        properties: Arg,
    },
    DeleteElement {
        element: Arg,
    },
    SetProperty {
        element: Arg,
        property: Arg,
        value: Arg,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arg {
    Param(String),
    Literal(Value),
}

impl OperatorStep {
    pub(crate) fn params(&self) -> impl Iterator<Item = &str> {
        let args: Vec<&Arg> = match self {
            OperatorStep::CreateElement {
                element,
                kind,
                properties,
            } => vec![element, kind, properties],
            OperatorStep::DeleteElement { element } => vec![element],
            OperatorStep::SetProperty {
                element,
                property,
                value,
            } => vec![element, property, value],
        };
        args.into_iter().filter_map(|a| match a {
            Arg::Param(p) => Some(p.as_str()),
            Arg::Literal(_) => None,
        })
    }
}

fn param(name: &str) -> Arg {
    Arg::Param(name.to_owned())
}

/// Definition of a built-in operator.
pub fn builtin(id: &str) -> Option<OperatorDef> {
    let (params, step) = match id {
        "create_element" => (
            vec![
                ("element", ValueSchema::Text),
                ("kind", ValueSchema::Text),
                ("properties", ValueSchema::Any),
            ],
            OperatorStep::CreateElement {
                element: param("element"),
                kind: param("kind"),
                properties: param("properties"),
            },
        ),
        "delete_element" => (
            vec![("element", ValueSchema::Text)],
            OperatorStep::DeleteElement {
                element: param("element"),
            },
        ),
        "set_property" => (
            vec![
                ("element", ValueSchema::Text),
                ("property", ValueSchema::Text),
                ("value", ValueSchema::Any),
            ],
            OperatorStep::SetProperty {
                element: param("element"),
                property: param("property"),
                value: param("value"),
            },
        ),
        _ => return None,
    };
    Some(OperatorDef {
        id: id.to_owned(),
        params: params.into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
        steps: vec![step],
    })
}

/// Looks up an operator applicable to models of `lang`.
pub fn resolve(lang: &ModelingLanguage, id: &str) -> Option<OperatorDef> {
    builtin(id).or_else(|| lang.operator(id).cloned())
}

impl OperatorDef {
    pub fn check_args(&self, args: &BTreeMap<String, Value>) -> Result<(), ModelError> {
        if let Some(k) = args.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(ModelError::ArgumentMismatch(format!(
                "{}: unexpected argument {k}",
                self.id
            )));
        }
        for (name, schema) in &self.params {
            match args.get(name) {
                None => {
                    return Err(ModelError::ArgumentMismatch(format!(
                        "{}: missing argument {name}",
                        self.id
                    )))
                }
                Some(v) if !schema.accepts(v) => {
                    return Err(ModelError::ArgumentMismatch(format!(
                        "{}: argument {name} expects {schema}, got {}",
                        self.id,
                        v.type_name()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

fn arg_value(arg: &Arg, args: &BTreeMap<String, Value>) -> Value {
    match arg {
        Arg::Param(p) => args[p].clone(),
        Arg::Literal(v) => v.clone(),
    }
}

fn arg_text(arg: &Arg, args: &BTreeMap<String, Value>, what: &str) -> Result<String, ModelError> {
    match arg_value(arg, args) {
        Value::Text(s) => Ok(s),
        other => Err(ModelError::InvalidStep(format!(
            "{what} must be text, got {}",
            other.type_name()
        ))),
    }
}

/// Builds a conforming element, checking kind and the full property set.
pub(crate) fn build_element(
    lang: &ModelingLanguage,
    id: &str,
    kind: &str,
    values: BTreeMap<String, Value>,
    stamp: Option<&WriteStamp>,
) -> Result<ModelElement, ModelError> {
    let decls = lang
        .property_decls(kind)
        .ok_or_else(|| ModelError::NonConforming(format!("element {id}: unknown kind {kind}")))?;
    if let Some(k) = values.keys().find(|k| !decls.contains_key(*k)) {
        return Err(ModelError::NonConforming(format!(
            "element {id}: {kind} has no property {k}"
        )));
    }
    let mut properties = BTreeMap::new();
    for (name, decl) in decls {
        let value = values.get(name).ok_or_else(|| {
            ModelError::NonConforming(format!("element {id}: missing property {name}"))
        })?;
        if !decl.schema.accepts(value) {
            return Err(ModelError::NonConforming(format!(
                "element {id}: {name} expects {}",
                decl.schema
            )));
        }
        properties.insert(
            name.clone(),
            ModelProperty {
                value: value.clone(),
                qualifier: decl.qualifier,
                written: stamp.cloned(),
            },
        );
    }
    Ok(ModelElement {
        id: id.to_owned(),
        kind: kind.to_owned(),
        properties,
    })
}

/// Runs the steps of `op` against `elements` in place. The caller works on
/// a copy and discards it on error.
pub(crate) fn run_steps(
    lang: &ModelingLanguage,
    op: &OperatorDef,
    args: &BTreeMap<String, Value>,
    elements: &mut BTreeMap<String, ModelElement>,
    stamp: &WriteStamp,
) -> Result<(), ModelError> {
    for step in &op.steps {
        match step {
            OperatorStep::CreateElement {
                element,
                kind,
                properties,
            } => {
                let id = arg_text(element, args, "element")?;
                let kind = arg_text(kind, args, "kind")?;
                let Value::Record(values) = arg_value(properties, args) else {
                    return Err(ModelError::InvalidStep(
                        "properties must be a record".into(),
                    ));
                };
                if elements.contains_key(&id) {
                    return Err(ModelError::InvalidStep(format!(
                        "element {id} already exists"
                    )));
                }
                let el = build_element(lang, &id, &kind, values, Some(stamp))?;
                elements.insert(id, el);
            }
            OperatorStep::DeleteElement { element } => {
                let id = arg_text(element, args, "element")?;
                if elements.remove(&id).is_none() {
                    return Err(ModelError::InvalidStep(format!("no element {id}")));
                }
            }
            OperatorStep::SetProperty {
                element,
                property,
                value,
            } => {
                let id = arg_text(element, args, "element")?;
                let name = arg_text(property, args, "property")?;
                let value = arg_value(value, args);
                let el = elements
                    .get_mut(&id)
                    .ok_or_else(|| ModelError::InvalidStep(format!("no element {id}")))?;
                let decl = lang
                    .property_decls(&el.kind)
                    .and_then(|d| d.get(&name))
                    .ok_or_else(|| {
                        ModelError::InvalidStep(format!("{} has no property {name}", el.kind))
                    })?;
                if !decl.schema.accepts(&value) {
                    return Err(ModelError::InvalidStep(format!(
                        "{id}.{name} expects {}",
                        decl.schema
                    )));
                }
                let slot = el
                    .properties
                    .get_mut(&name)
                    .expect("conforming elements carry every declared property");
                slot.value = value;
                slot.written = Some(stamp.clone());
            }
        }
    }
    Ok(())
}
