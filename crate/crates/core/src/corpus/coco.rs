//! COCO instances JSON ingestion.
//!
//! Only `images[].id`, `annotations[].{image_id,category_id}` and
//! `categories[].{id,name}` are read; boxes, masks and the rest are ignored.
//! The document is walked as a [`serde_json::Value`] so that schema errors can
//! name the exact JSON path that is missing or malformed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde_json::Value;

use super::{ImageRecord, ObjectId, ObjectVocabulary, Source};
use crate::error::{Error, Result};
use crate::jsonl;

pub fn load_coco_instances(path: &Path) -> Result<(ObjectVocabulary, Vec<ImageRecord>)> {
    let text = jsonl::read_to_string(path)?;
    parse_coco_instances(&text, &path.display().to_string())
}

pub fn parse_coco_instances(
    text: &str,
    location: &str,
) -> Result<(ObjectVocabulary, Vec<ImageRecord>)> {
    let root: Value = serde_json::from_str(text).map_err(|source| Error::Json {
        location: location.to_string(),
        source,
    })?;
    let walker = Walker { location };

    let categories = walker.array(&root, "$", "categories")?;
    let mut by_coco_id: BTreeMap<i64, (String, String)> = BTreeMap::new();
    for (i, cat) in categories.iter().enumerate() {
        let path = format!("$.categories[{i}]");
        let id = walker.integer(cat, &path, "id")?;
        let name = walker.string(cat, &path, "name")?;
        if by_coco_id.insert(id, (name, path)).is_some() {
            return Err(Error::Conflict(format!(
                "{location}: category id {id} is declared twice"
            )));
        }
    }
    // Dense ids follow ascending COCO category id.
    let vocabulary = ObjectVocabulary::new(by_coco_id.values().map(|(name, _)| name))?;
    let category_map: HashMap<i64, ObjectId> = by_coco_id
        .keys()
        .enumerate()
        .map(|(dense, &coco)| (coco, ObjectId(dense as u32)))
        .collect();

    let images = walker.array(&root, "$", "images")?;
    let mut records: Vec<ImageRecord> = Vec::with_capacity(images.len());
    let mut by_image: HashMap<String, usize> = HashMap::with_capacity(images.len());
    for (i, image) in images.iter().enumerate() {
        let path = format!("$.images[{i}]");
        let image_id = walker.id_string(image, &path, "id")?;
        if by_image.insert(image_id.clone(), records.len()).is_some() {
            return Err(Error::Conflict(format!(
                "{location}: image id {image_id} is declared twice"
            )));
        }
        records.push(ImageRecord {
            image_id,
            ground_truth: BTreeSet::new(),
            source: Source::Annotation,
        });
    }

    let annotations = walker.array(&root, "$", "annotations")?;
    for (i, ann) in annotations.iter().enumerate() {
        let path = format!("$.annotations[{i}]");
        let image_id = walker.id_string(ann, &path, "image_id")?;
        let category_id = walker.integer(ann, &path, "category_id")?;
        let object = *category_map.get(&category_id).ok_or_else(|| {
            Error::Reference(format!(
                "{location}: {path}.category_id = {category_id} is not a declared category"
            ))
        })?;
        let slot = *by_image.get(&image_id).ok_or_else(|| {
            Error::Reference(format!(
                "{location}: {path}.image_id = {image_id} is not a declared image"
            ))
        })?;
        records[slot].ground_truth.insert(object);
    }

    Ok((vocabulary, records))
}

struct Walker<'a> {
    location: &'a str,
}

impl Walker<'_> {
    fn field<'v>(&self, value: &'v Value, path: &str, key: &str) -> Result<&'v Value> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema(self.location, format!("{path} must be an object")))?;
        obj.get(key).ok_or_else(|| {
            Error::schema(
                self.location,
                format!("missing required field `{key}` at {path}.{key}"),
            )
        })
    }

    fn array<'v>(&self, value: &'v Value, path: &str, key: &str) -> Result<&'v Vec<Value>> {
        self.field(value, path, key)?
            .as_array()
            .ok_or_else(|| Error::schema(self.location, format!("{path}.{key} must be an array")))
    }

    fn integer(&self, value: &Value, path: &str, key: &str) -> Result<i64> {
        self.field(value, path, key)?
            .as_i64()
            .ok_or_else(|| Error::schema(self.location, format!("{path}.{key} must be an integer")))
    }

    fn string(&self, value: &Value, path: &str, key: &str) -> Result<String> {
        self.field(value, path, key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::schema(self.location, format!("{path}.{key} must be a string")))
    }

    /// Image ids are integers in COCO proper; strings are accepted too.
    fn id_string(&self, value: &Value, path: &str, key: &str) -> Result<String> {
        match self.field(value, path, key)? {
            Value::Number(n) if n.is_i64() || n.is_u64() => Ok(n.to_string()),
            Value::String(s) if !s.is_empty() => Ok(s.clone()),
            _ => Err(Error::schema(
                self.location,
                format!("{path}.{key} must be an integer or non-empty string"),
            )),
        }
    }
}
