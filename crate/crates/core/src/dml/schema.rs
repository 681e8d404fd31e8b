use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::acts::{ActKind, ActLabel};
use super::error::DmlError;
use super::tokenize::{fold_value, normalize_value};

/// Reserved action names for the two special control actions.
pub const END_TURN: &str = "EndTurn";
pub const END_DIALOGUE: &str = "EndDialogue";

fn is_true(b: &bool) -> bool {
    *b
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityTypeDef {
    pub name: String,
    #[serde(default)]
    pub catalog: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Whether the catalog is exposed to the NER model as a static
    /// catalogue feature. Types that only back simulated API returns turn
    /// this off so their values stay out of the static features.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub catalog_feature: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArgDef {
    pub name: String,
    pub entity_type: String,
    #[serde(default = "default_true")]
    pub required: bool,
    #[serde(default)]
    pub multi_valued: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiDef {
    pub name: String,
    #[serde(default)]
    pub args: Vec<ArgDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub return_type: Option<String>,
    #[serde(default)]
    pub confirm_before_call: bool,
    /// Entity type whose catalog supplies simulated return values; defaults
    /// to the return type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub return_sampler: Option<String>,
}

impl ApiDef {
    pub fn arg(&self, name: &str) -> Option<&ArgDef> {
        self.args.iter().find(|a| a.name == name)
    }

    pub fn sampler_type(&self) -> Option<&str> {
        self.return_sampler
            .as_deref()
            .or(self.return_type.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlgDef {
    pub name: String,
    #[serde(default)]
    pub args: Vec<ArgDef>,
    pub templates: Vec<String>,
    #[serde(default)]
    pub acts: Vec<ActLabel>,
}

impl NlgDef {
    pub fn arg(&self, name: &str) -> Option<&ArgDef> {
        self.args.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserTemplateDef {
    pub text: String,
    pub acts: Vec<ActLabel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paraphrases: Vec<String>,
}

/// On-disk schema document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    #[serde(default)]
    pub name: String,
    pub entity_types: Vec<EntityTypeDef>,
    pub apis: Vec<ApiDef>,
    #[serde(default)]
    pub nlg_responses: Vec<NlgDef>,
    #[serde(default)]
    pub user_templates: Vec<UserTemplateDef>,
    /// Template text -> alternative phrasings, merged into the matching
    /// template at load time.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub paraphrases: BTreeMap<String, Vec<String>>,
}

/// Either an API or an NLG response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionRef<'a> {
    Api(&'a ApiDef),
    Nlg(&'a NlgDef),
}

impl<'a> ActionRef<'a> {
    pub fn name(&self) -> &'a str {
        match self {
            ActionRef::Api(a) => &a.name,
            ActionRef::Nlg(n) => &n.name,
        }
    }

    pub fn args(&self) -> &'a [ArgDef] {
        match self {
            ActionRef::Api(a) => &a.args,
            ActionRef::Nlg(n) => &n.args,
        }
    }
}

/// A validated domain schema with every cross-reference resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSchema {
    pub name: String,
    pub entity_types: Vec<EntityTypeDef>,
    pub apis: Vec<ApiDef>,
    pub nlg_responses: Vec<NlgDef>,
    pub user_templates: Vec<UserTemplateDef>,
    entity_index: HashMap<String, usize>,
    api_index: HashMap<String, usize>,
    nlg_index: HashMap<String, usize>,
    slot_types: BTreeMap<String, String>,
}

/// Parse a schema document (JSON).
pub fn parse_domain(source: &str) -> Result<DomainSchema, DmlError> {
    let file: SchemaFile = serde_json::from_str(source).map_err(DmlError::from_json)?;
    DomainSchema::from_file(file)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Placeholder names in a template, in order of appearance. `$5.99` is not
/// a placeholder; `$cast.name` is rejected.
pub fn placeholders(template: &str) -> Result<Vec<String>, DmlError> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$'
            && i + 1 < bytes.len()
            && (bytes[i + 1].is_ascii_alphabetic() || bytes[i + 1] == b'_')
        {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            let name = &template[start..j];
            if j + 1 < bytes.len() && bytes[j] == b'.' && bytes[j + 1].is_ascii_alphabetic() {
                let mut k = j + 1;
                while k < bytes.len() && (bytes[k].is_ascii_alphanumeric() || bytes[k] == b'_') {
                    k += 1;
                }
                return Err(DmlError::FieldAccess(template[start..k].to_string()));
            }
            out.push(name.to_string());
            i = j;
        } else {
            i += 1;
        }
    }
    Ok(out)
}

fn index_unique<'a>(
    kind: &'static str,
    names: impl Iterator<Item = &'a str>,
) -> Result<HashMap<String, usize>, DmlError> {
    let mut index = HashMap::new();
    for (i, name) in names.enumerate() {
        if !is_identifier(name) {
            return Err(DmlError::Invalid(format!(
                "{kind} name `{name}` is not an identifier"
            )));
        }
        if index.insert(name.to_string(), i).is_some() {
            return Err(DmlError::Duplicate {
                kind,
                name: name.to_string(),
            });
        }
    }
    Ok(index)
}

impl DomainSchema {
    pub fn from_file(file: SchemaFile) -> Result<Self, DmlError> {
        let SchemaFile {
            name,
            mut entity_types,
            apis,
            nlg_responses,
            mut user_templates,
            paraphrases,
        } = file;

        for et in &mut entity_types {
            let mut seen = BTreeSet::new();
            let mut catalog = Vec::with_capacity(et.catalog.len());
            for value in &et.catalog {
                let v = normalize_value(value);
                if v.is_empty() {
                    return Err(DmlError::Invalid(format!(
                        "empty catalog value in entity type `{}`",
                        et.name
                    )));
                }
                if seen.insert(v.to_lowercase()) {
                    catalog.push(v);
                }
            }
            et.catalog = catalog;
        }
        let entity_index =
            index_unique("entity type", entity_types.iter().map(|e| e.name.as_str()))?;
        let api_index = index_unique("API", apis.iter().map(|a| a.name.as_str()))?;
        let nlg_index = index_unique(
            "NLG response",
            nlg_responses.iter().map(|n| n.name.as_str()),
        )?;
        for name in api_index.keys().chain(nlg_index.keys()) {
            if name == END_TURN || name == END_DIALOGUE {
                return Err(DmlError::Invalid(format!(
                    "`{name}` is a reserved action name"
                )));
            }
            if api_index.contains_key(name) && nlg_index.contains_key(name) {
                return Err(DmlError::Duplicate {
                    kind: "action",
                    name: name.clone(),
                });
            }
        }

        let mut slot_types: BTreeMap<String, String> = BTreeMap::new();
        let mut check_args = |owner: &str, args: &[ArgDef]| -> Result<(), DmlError> {
            let mut names = BTreeSet::new();
            for arg in args {
                if !is_identifier(&arg.name) {
                    return Err(DmlError::Invalid(format!(
                        "argument name `{}` of `{owner}` is not an identifier",
                        arg.name
                    )));
                }
                if !names.insert(arg.name.as_str()) {
                    return Err(DmlError::Duplicate {
                        kind: "argument",
                        name: format!("{owner}.{}", arg.name),
                    });
                }
                if !entity_index.contains_key(&arg.entity_type) {
                    return Err(DmlError::Unresolved {
                        kind: "entity type",
                        name: arg.entity_type.clone(),
                        context: format!("argument `{owner}.{}`", arg.name),
                    });
                }
                match slot_types.get(&arg.name) {
                    Some(t) if *t != arg.entity_type => {
                        return Err(DmlError::Invalid(format!(
                            "slot `{}` is typed `{}` in `{owner}` but `{t}` elsewhere",
                            arg.name, arg.entity_type
                        )))
                    }
                    Some(_) => {}
                    None => {
                        slot_types.insert(arg.name.clone(), arg.entity_type.clone());
                    }
                }
            }
            Ok(())
        };
        for api in &apis {
            check_args(&api.name, &api.args)?;
        }
        for nlg in &nlg_responses {
            check_args(&nlg.name, &nlg.args)?;
        }

        for api in &apis {
            for (kind, ty) in [
                ("return type", &api.return_type),
                ("return sampler", &api.return_sampler),
            ] {
                if let Some(ty) = ty {
                    if !entity_index.contains_key(ty) {
                        return Err(DmlError::Unresolved {
                            kind: "entity type",
                            name: ty.clone(),
                            context: format!("{kind} of API `{}`", api.name),
                        });
                    }
                }
            }
            if api.return_sampler.is_some() && api.return_type.is_none() {
                return Err(DmlError::Invalid(format!(
                    "API `{}` has a return sampler but no return type",
                    api.name
                )));
            }
        }

        let check_act = |owner: &str, act: &ActLabel| -> Result<(), DmlError> {
            let Some(target) = &act.target else {
                return Ok(());
            };
            let resolves = match act.kind {
                ActKind::Inform | ActKind::Correct => slot_types.contains_key(target),
                ActKind::Request => {
                    slot_types.contains_key(target) || api_index.contains_key(target)
                }
                _ => api_index.contains_key(target),
            };
            if resolves {
                Ok(())
            } else {
                Err(DmlError::Unresolved {
                    kind: if act.kind.targets_slot() {
                        "slot"
                    } else {
                        "action"
                    },
                    name: target.clone(),
                    context: format!("act `{act}` of {owner}"),
                })
            }
        };

        for nlg in &nlg_responses {
            if nlg.templates.is_empty() {
                return Err(DmlError::Invalid(format!(
                    "NLG response `{}` has no template text",
                    nlg.name
                )));
            }
            for text in &nlg.templates {
                for ph in placeholders(text)? {
                    if nlg.arg(&ph).is_none() {
                        return Err(DmlError::Unresolved {
                            kind: "argument",
                            name: ph,
                            context: format!("template of NLG response `{}`", nlg.name),
                        });
                    }
                }
            }
            for act in &nlg.acts {
                check_act(&format!("NLG response `{}`", nlg.name), act)?;
            }
        }

        let mut template_pos: HashMap<String, usize> = HashMap::new();
        for (i, t) in user_templates.iter().enumerate() {
            if template_pos.insert(t.text.clone(), i).is_some() {
                return Err(DmlError::Duplicate {
                    kind: "user template",
                    name: t.text.clone(),
                });
            }
        }
        for (text, alts) in paraphrases {
            let Some(&i) = template_pos.get(&text) else {
                return Err(DmlError::Unresolved {
                    kind: "user template",
                    name: text,
                    context: "the paraphrase table".to_string(),
                });
            };
            for alt in alts {
                if !user_templates[i].paraphrases.contains(&alt) {
                    user_templates[i].paraphrases.push(alt);
                }
            }
        }
        let mut used_types = BTreeSet::new();
        for t in &user_templates {
            let owner = format!("user template \"{}\"", t.text);
            if t.acts.is_empty() {
                return Err(DmlError::Invalid(format!("{owner} declares no acts")));
            }
            let mut act_slots: Vec<String> = Vec::new();
            for act in &t.acts {
                check_act(&owner, act)?;
                if act.kind.targets_slot() {
                    act_slots.push(act.target.clone().unwrap_or_default());
                }
            }
            act_slots.sort();
            for text in std::iter::once(&t.text).chain(&t.paraphrases) {
                let mut phs = placeholders(text)?;
                for ph in &phs {
                    match slot_types.get(ph) {
                        Some(ty) => {
                            used_types.insert(ty.clone());
                        }
                        None => {
                            return Err(DmlError::Unresolved {
                                kind: "slot",
                                name: ph.clone(),
                                context: owner.to_string(),
                            })
                        }
                    }
                }
                phs.sort();
                if phs != act_slots {
                    return Err(DmlError::Invalid(format!(
                        "placeholders of \"{text}\" do not match the inform/correct acts of {owner}"
                    )));
                }
            }
        }
        for ty in used_types {
            let et = &entity_types[entity_index[&ty]];
            if et.catalog.is_empty() {
                return Err(DmlError::Invalid(format!(
                    "entity type `{ty}` is used in user templates but has an empty catalog"
                )));
            }
        }

        Ok(DomainSchema {
            name,
            entity_types,
            apis,
            nlg_responses,
            user_templates,
            entity_index,
            api_index,
            nlg_index,
            slot_types,
        })
    }

    /// Canonical on-disk form: paraphrases inline, no paraphrase table.
    pub fn to_file(&self) -> SchemaFile {
        SchemaFile {
            name: self.name.clone(),
            entity_types: self.entity_types.clone(),
            apis: self.apis.clone(),
            nlg_responses: self.nlg_responses.clone(),
            user_templates: self.user_templates.clone(),
            paraphrases: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("schema serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(&self.to_file()).expect("schema serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// (number of APIs, number of entity types)
    pub fn counts(&self) -> (usize, usize) {
        (self.apis.len(), self.entity_types.len())
    }

    pub fn entity_type(&self, name: &str) -> Option<&EntityTypeDef> {
        self.entity_index.get(name).map(|&i| &self.entity_types[i])
    }

    pub fn entity_type_index(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn api(&self, name: &str) -> Option<&ApiDef> {
        self.api_index.get(name).map(|&i| &self.apis[i])
    }

    pub fn nlg(&self, name: &str) -> Option<&NlgDef> {
        self.nlg_index.get(name).map(|&i| &self.nlg_responses[i])
    }

    pub fn action(&self, name: &str) -> Option<ActionRef<'_>> {
        self.api(name)
            .map(ActionRef::Api)
            .or_else(|| self.nlg(name).map(ActionRef::Nlg))
    }

    /// Entity type of a slot (argument name); slot names are typed
    /// consistently across the schema.
    pub fn slot_type(&self, slot: &str) -> Option<&str> {
        self.slot_types.get(slot).map(String::as_str)
    }

    pub fn slots(&self) -> impl Iterator<Item = (&str, &str)> {
        self.slot_types
            .iter()
            .map(|(s, t)| (s.as_str(), t.as_str()))
    }

    /// Whether `slot` is declared multi-valued by any action.
    pub fn slot_is_multi(&self, slot: &str) -> bool {
        self.apis
            .iter()
            .flat_map(|a| &a.args)
            .chain(self.nlg_responses.iter().flat_map(|n| &n.args))
            .any(|a| a.name == slot && a.multi_valued)
    }

    /// All action names the action predictor chooses among: APIs, NLG
    /// responses, then the two control actions.
    pub fn action_names(&self) -> Vec<String> {
        self.apis
            .iter()
            .map(|a| a.name.clone())
            .chain(self.nlg_responses.iter().map(|n| n.name.clone()))
            .chain([END_TURN.to_string(), END_DIALOGUE.to_string()])
            .collect()
    }

    /// Whether a value belongs to the catalog of `entity_type` (case-folded).
    pub fn in_catalog(&self, entity_type: &str, value: &str) -> bool {
        let folded = fold_value(value);
        self.entity_type(entity_type)
            .is_some_and(|et| et.catalog.iter().any(|c| c.to_lowercase() == folded))
    }

    /// Whether a value appears in any catalog exposed as a static feature.
    pub fn in_static_catalogs(&self, value: &str) -> bool {
        let folded = fold_value(value);
        self.entity_types
            .iter()
            .filter(|et| et.catalog_feature)
            .any(|et| et.catalog.iter().any(|c| c.to_lowercase() == folded))
    }

    /// NLG responses whose declared acts equal `acts` as a multiset.
    pub fn nlgs_for_acts(&self, acts: &[ActLabel]) -> Vec<&NlgDef> {
        let mut want = acts.to_vec();
        want.sort();
        self.nlg_responses
            .iter()
            .filter(|n| {
                let mut have = n.acts.clone();
                have.sort();
                have == want
            })
            .collect()
    }

    /// Whether the target of `act` names a declared slot or action.
    pub fn act_resolves(&self, act: &ActLabel) -> bool {
        let Some(target) = &act.target else {
            return !act.kind.takes_target();
        };
        match act.kind {
            ActKind::Inform | ActKind::Correct => self.slot_types.contains_key(target),
            ActKind::Request => {
                self.slot_types.contains_key(target) || self.api_index.contains_key(target)
            }
            _ => self.api_index.contains_key(target),
        }
    }

    /// The slot-request NLG for `slot`, if declared.
    pub fn request_nlg(&self, slot: &str) -> Option<&NlgDef> {
        self.nlgs_for_acts(&[ActLabel::new(ActKind::Request, slot)])
            .into_iter()
            .next()
    }

    /// Replace the catalog of one entity type (used to simulate live APIs
    /// returning values never seen during training).
    pub fn with_catalog(&self, entity_type: &str, values: Vec<String>) -> Result<Self, DmlError> {
        let mut file = self.to_file();
        let et = file
            .entity_types
            .iter_mut()
            .find(|e| e.name == entity_type)
            .ok_or_else(|| DmlError::Unresolved {
                kind: "entity type",
                name: entity_type.to_string(),
                context: "catalog replacement".to_string(),
            })?;
        et.catalog = values;
        DomainSchema::from_file(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"{
      "name": "mini",
      "entity_types": [
        {"name": "Movie", "catalog": ["la la land", "Joker"]},
        {"name": "Duration", "catalog": ["2 hours"]}
      ],
      "apis": [
        {"name": "GetDuration", "args": [{"name": "movieTitle", "entity_type": "Movie"}],
         "return_type": "Duration"}
      ],
      "nlg_responses": [
        {"name": "inform_movie_duration",
         "args": [{"name": "movieTitle", "entity_type": "Movie"}, {"name": "duration", "entity_type": "Duration"}],
         "templates": ["$movieTitle is $duration long"],
         "acts": ["notify_result(GetDuration)"]}
      ],
      "user_templates": [
        {"text": "how long is $movieTitle", "acts": ["request(GetDuration)", "inform(movieTitle)"]}
      ],
      "paraphrases": {"how long is $movieTitle": ["what is the running time of $movieTitle"]}
    }"#;

    #[test]
    fn parses_and_resolves() {
        let s = parse_domain(MINI).unwrap();
        assert_eq!(s.counts(), (1, 2));
        assert_eq!(s.slot_type("movieTitle"), Some("Movie"));
        assert_eq!(s.user_templates[0].paraphrases.len(), 1);
        assert!(s.in_catalog("Movie", "JOKER"));
        assert_eq!(
            s.action_names(),
            vec![
                "GetDuration",
                "inform_movie_duration",
                "EndTurn",
                "EndDialogue"
            ]
        );
    }

    #[test]
    fn canonical_round_trip() {
        let s = parse_domain(MINI).unwrap();
        let again = parse_domain(&s.to_json()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.fingerprint(), again.fingerprint());
    }

    #[test]
    fn dangling_reference() {
        let src = r#"{"entity_types": [], "apis": [{"name": "FindMovies",
            "args": [{"name": "movieTitle", "entity_type": "Movie"}]}]}"#;
        match parse_domain(src) {
            Err(DmlError::Unresolved { name, .. }) => assert_eq!(name, "Movie"),
            other => panic!("expected unresolved reference, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_domain("{\n  \"entity_types\": [,]\n}") {
            Err(DmlError::Syntax { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_identifier() {
        let src = r#"{"entity_types": [{"name": "A", "catalog": ["x"]}, {"name": "A", "catalog": ["y"]}], "apis": []}"#;
        assert!(matches!(parse_domain(src), Err(DmlError::Duplicate { .. })));
    }

    #[test]
    fn field_access_is_rejected() {
        let src = MINI.replace(
            "$movieTitle is $duration long",
            "$cast.name was in $movieTitle",
        );
        assert!(matches!(parse_domain(&src), Err(DmlError::FieldAccess(f)) if f == "cast.name"));
    }

    #[test]
    fn placeholder_scan() {
        assert_eq!(
            placeholders("a total of $5.99 for $size").unwrap(),
            vec!["size"]
        );
        assert!(placeholders("no slots").unwrap().is_empty());
    }

    #[test]
    fn template_placeholders_must_match_acts() {
        let src = MINI.replace(
            r#""acts": ["request(GetDuration)", "inform(movieTitle)"]"#,
            r#""acts": ["request(GetDuration)"]"#,
        );
        assert!(matches!(parse_domain(&src), Err(DmlError::Invalid(_))));
    }

    #[test]
    fn inconsistent_slot_types() {
        let src = MINI.replace(
            r#"{"name": "duration", "entity_type": "Duration"}"#,
            r#"{"name": "movieTitle", "entity_type": "Duration"}"#,
        );
        assert!(parse_domain(&src).is_err());
    }
}
