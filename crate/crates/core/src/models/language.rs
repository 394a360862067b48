use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::operator::{OperatorDef, BUILTIN_OPERATORS};
use super::{Model, ModelError};
use crate::data::PropertyKind;
use crate::refs::PropertyRef;
use crate::value::{Value, ValueSchema};

/// A minimal metamodel: element kinds, typed properties per kind, integrity
/// rules over whole models, and custom operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingLanguage {
    pub id: String,
    pub kinds: Vec<String>,
    /// kind -> property name -> declaration
    #[serde(default)]
    pub properties: BTreeMap<String, BTreeMap<String, PropertyDecl>>,
    #[serde(default)]
    pub rules: Vec<IntegrityRule>,
    #[serde(default)]
    pub operators: Vec<OperatorDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDecl {
    pub schema: ValueSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<PropertyKind>,
}

impl PropertyDecl {
    pub fn new(schema: ValueSchema) -> Self {
        Self {
            schema,
            qualifier: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityRule {
    pub name: String,
    #[serde(flatten)]
    pub check: RuleCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum RuleCheck {
    /// Every element of `kind` satisfies `predicate`.
    ForAll { kind: String, predicate: Predicate },
    /// Number of elements of `kind` lies within the bounds.
    Count {
        kind: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Compare {
        left: Operand,
        op: CmpOp,
        right: Operand,
    },
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    /// Property of the element under test.
    Property(String),
    Const(Value),
    /// Property of another model owned by the same manager.
    Remote(PropertyRef),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    fn holds(self, l: &Value, r: &Value) -> bool {
        use std::cmp::Ordering::*;
        let ord = match (l.as_f64(), r.as_f64()) {
            (Some(a), Some(b)) => a.partial_cmp(&b),
            _ => match (l, r) {
                (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
                _ if l == r => Some(Equal),
                _ => None,
            },
        };
        match (self, ord) {
            (CmpOp::Ne, None) => true,
            (_, None) => false,
            (CmpOp::Lt, Some(o)) => o == Less,
            (CmpOp::Le, Some(o)) => o != Greater,
            (CmpOp::Eq, Some(o)) => o == Equal,
            (CmpOp::Ne, Some(o)) => o != Equal,
            (CmpOp::Ge, Some(o)) => o != Less,
            (CmpOp::Gt, Some(o)) => o == Greater,
        }
    }
}

/// Resolves remote operands; `None` makes the comparison fail.
pub type RemoteLookup<'a> = dyn Fn(&PropertyRef) -> Option<Value> + 'a;

impl Predicate {
    fn eval(&self, props: &BTreeMap<String, Value>, remote: &RemoteLookup<'_>) -> bool {
        match self {
            Predicate::Compare { left, op, right } => {
                let get = |o: &Operand| match o {
                    Operand::Property(p) => props.get(p).cloned(),
                    Operand::Const(v) => Some(v.clone()),
                    Operand::Remote(r) => remote(r),
                };
                match (get(left), get(right)) {
                    (Some(l), Some(r)) => op.holds(&l, &r),
                    _ => false,
                }
            }
            Predicate::All(ps) => ps.iter().all(|p| p.eval(props, remote)),
            Predicate::Any(ps) => ps.iter().any(|p| p.eval(props, remote)),
            Predicate::Not(p) => !p.eval(props, remote),
        }
    }

    fn local_properties<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Predicate::Compare { left, right, .. } => {
                for o in [left, right] {
                    if let Operand::Property(p) = o {
                        out.push(p);
                    }
                }
            }
            Predicate::All(ps) | Predicate::Any(ps) => {
                ps.iter().for_each(|p| p.local_properties(out))
            }
            Predicate::Not(p) => p.local_properties(out),
        }
    }

    fn remotes<'a>(&'a self, out: &mut Vec<&'a PropertyRef>) {
        match self {
            Predicate::Compare { left, right, .. } => {
                for o in [left, right] {
                    if let Operand::Remote(r) = o {
                        out.push(r);
                    }
                }
            }
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().for_each(|p| p.remotes(out)),
            Predicate::Not(p) => p.remotes(out),
        }
    }
}

impl IntegrityRule {
    pub fn holds(&self, model: &Model, remote: &RemoteLookup<'_>) -> bool {
        match &self.check {
            RuleCheck::ForAll { kind, predicate } => model
                .elements
                .values()
                .filter(|e| &e.kind == kind)
                .all(|e| {
                    let props: BTreeMap<String, Value> = e
                        .properties
                        .iter()
                        .map(|(k, p)| (k.clone(), p.value.clone()))
                        .collect();
                    predicate.eval(&props, remote)
                }),
            RuleCheck::Count { kind, min, max } => {
                let n = model.elements.values().filter(|e| &e.kind == kind).count();
                min.is_none_or(|m| n >= m) && max.is_none_or(|m| n <= m)
            }
        }
    }

    /// Remote properties the rule reads.
    pub fn remote_refs(&self) -> Vec<&PropertyRef> {
        let mut out = Vec::new();
        if let RuleCheck::ForAll { predicate, .. } = &self.check {
            predicate.remotes(&mut out);
        }
        out
    }
}

impl ModelingLanguage {
    pub fn declares_kind(&self, kind: &str) -> bool {
        self.kinds.iter().any(|k| k == kind)
    }

    pub fn property_decls(&self, kind: &str) -> Option<&BTreeMap<String, PropertyDecl>> {
        static EMPTY: BTreeMap<String, PropertyDecl> = BTreeMap::new();
        if !self.declares_kind(kind) {
            return None;
        }
        Some(self.properties.get(kind).unwrap_or(&EMPTY))
    }

    pub fn operator(&self, id: &str) -> Option<&OperatorDef> {
        self.operators.iter().find(|o| o.id == id)
    }

    /// Names of rules violated by `model`.
    pub fn violated_rules(&self, model: &Model, remote: &RemoteLookup<'_>) -> Vec<String> {
        self.rules
            .iter()
            .filter(|r| !r.holds(model, remote))
            .map(|r| r.name.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ill = |msg: String| Err(ModelError::IllFormedLanguage(format!("{}: {msg}", self.id)));
        if self.id.is_empty() {
            return ill("empty language id".into());
        }
        let mut kinds = BTreeSet::new();
        for k in &self.kinds {
            if !kinds.insert(k.as_str()) {
                return ill(format!("duplicate kind {k}"));
            }
        }
        for kind in self.properties.keys() {
            if !kinds.contains(kind.as_str()) {
                return ill(format!("property schema for undeclared kind {kind}"));
            }
        }
        let mut rule_names = BTreeSet::new();
        for rule in &self.rules {
            if !rule_names.insert(rule.name.as_str()) {
                return ill(format!("duplicate rule {}", rule.name));
            }
            let kind = match &rule.check {
                RuleCheck::ForAll { kind, .. } | RuleCheck::Count { kind, .. } => kind,
            };
            if !kinds.contains(kind.as_str()) {
                return ill(format!(
                    "rule {} references undeclared kind {kind}",
                    rule.name
                ));
            }
            if let RuleCheck::ForAll { kind, predicate } = &rule.check {
                let mut used = Vec::new();
                predicate.local_properties(&mut used);
                let decls = self.property_decls(kind).expect("kind checked above");
                if let Some(p) = used.iter().find(|p| !decls.contains_key(**p)) {
                    return ill(format!(
                        "rule {} reads undeclared property {kind}.{p}",
                        rule.name
                    ));
                }
            }
        }
        let mut op_ids = BTreeSet::new();
        for op in &self.operators {
            if BUILTIN_OPERATORS.contains(&op.id.as_str()) || !op_ids.insert(op.id.as_str()) {
                return ill(format!("operator id {} is already taken", op.id));
            }
            for step in &op.steps {
                if let Some(p) = step.params().find(|p| !op.params.contains_key(*p)) {
                    return ill(format!("operator {} uses undeclared parameter {p}", op.id));
                }
            }
        }
        Ok(())
    }
}
