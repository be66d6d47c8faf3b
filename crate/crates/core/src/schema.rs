//! Schema data model and the lattice operations agents use to exchange
//! schema knowledge.
//!
//! A [`Schema`] is a set of tables (each an ordered list of columns with a
//! primary key) plus foreign keys between them. Schemas form a
//! join-semilattice under [`merge_schemas`] with the empty schema as the
//! identity: merging never drops a table, a column or a key. Identifier
//! comparison is case-insensitive everywhere; the spelling of the first
//! occurrence is kept for display.

use std::collections::HashSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor on retained columns per table used when nothing else is configured.
pub const DEFAULT_RETENTION_FLOOR: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("identifier must not be empty ({0})")]
    EmptyIdentifier(&'static str),
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{column}` in table `{table}`")]
    DuplicateColumn { table: String, column: String },
    #[error("primary key column `{column}` is not a column of `{table}`")]
    PrimaryKeyNotColumn { table: String, column: String },
    #[error("foreign key {0} does not resolve")]
    DanglingForeignKey(String),
    #[error("cannot merge schemas of different databases `{left}` and `{right}`")]
    MergeConflict { left: String, right: String },
    #[error("selection references unknown table `{0}`")]
    UnknownSelectedTable(String),
    #[error("selection references unknown column `{table}.{column}`")]
    UnknownSelectedColumn { table: String, column: String },
    #[error("cannot split {tables} tables into {parts} non-empty parts")]
    InfeasiblePartition { parts: usize, tables: usize },
    #[error("partition count must be at least 1")]
    ZeroParts,
}

/// Lowercased form used for every identifier comparison.
pub fn ident_key(name: &str) -> String {
    name.to_lowercase()
}

fn same_ident(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b) || a.to_lowercase() == b.to_lowercase()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Number,
    Time,
    Boolean,
    #[default]
    #[serde(alias = "others")]
    Other,
}

impl ColumnType {
    /// Maps a benchmark type tag or a declared SQL type onto the coarse enum.
    pub fn from_declared(declared: &str) -> Self {
        let d = declared.trim().to_lowercase();
        match d.as_str() {
            "text" => return ColumnType::Text,
            "number" => return ColumnType::Number,
            "time" => return ColumnType::Time,
            "boolean" | "bool" => return ColumnType::Boolean,
            "others" | "other" | "" => return ColumnType::Other,
            _ => {}
        }
        if d.contains("char") || d.contains("text") || d.contains("clob") || d.contains("string") {
            ColumnType::Text
        } else if d.contains("int")
            || d.contains("real")
            || d.contains("floa")
            || d.contains("doub")
            || d.contains("num")
            || d.contains("dec")
        {
            ColumnType::Number
        } else if d.contains("date") || d.contains("time") || d.contains("year") {
            ColumnType::Time
        } else if d.contains("bool") || d.contains("bit") {
            ColumnType::Boolean
        } else {
            ColumnType::Other
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Number => "number",
            ColumnType::Time => "time",
            ColumnType::Boolean => "boolean",
            ColumnType::Other => "other",
        }
    }
}

/// A fully qualified column. Equality, ordering and hashing ignore case and
/// the column type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table_name: String,
    pub column_name: String,
    #[serde(default)]
    pub column_type: ColumnType,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table_name: table.into(),
            column_name: column.into(),
            column_type: ColumnType::Other,
        }
    }

    pub fn typed(table: impl Into<String>, column: impl Into<String>, ty: ColumnType) -> Self {
        ColumnRef {
            table_name: table.into(),
            column_name: column.into(),
            column_type: ty,
        }
    }

    fn key(&self) -> (String, String) {
        (ident_key(&self.table_name), ident_key(&self.column_name))
    }
}

impl PartialEq for ColumnRef {
    fn eq(&self, other: &Self) -> bool {
        same_ident(&self.table_name, &other.table_name)
            && same_ident(&self.column_name, &other.column_name)
    }
}

impl Eq for ColumnRef {}

impl Hash for ColumnRef {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl PartialOrd for ColumnRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ColumnRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table_name, self.column_name)
    }
}

/// Either a whole table or one column; the unit of schema membership.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchemaRef {
    Table { name: String },
    Column(ColumnRef),
}

impl SchemaRef {
    pub fn table(name: impl Into<String>) -> Self {
        SchemaRef::Table { name: name.into() }
    }

    pub fn column(table: impl Into<String>, column: impl Into<String>) -> Self {
        SchemaRef::Column(ColumnRef::new(table, column))
    }

    pub fn table_name(&self) -> &str {
        match self {
            SchemaRef::Table { name } => name,
            SchemaRef::Column(c) => &c.table_name,
        }
    }

    fn key(&self) -> (String, Option<String>) {
        match self {
            SchemaRef::Table { name } => (ident_key(name), None),
            SchemaRef::Column(c) => (ident_key(&c.table_name), Some(ident_key(&c.column_name))),
        }
    }
}

impl PartialEq for SchemaRef {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for SchemaRef {}

impl Hash for SchemaRef {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl PartialOrd for SchemaRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SchemaRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl From<ColumnRef> for SchemaRef {
    fn from(c: ColumnRef) -> Self {
        SchemaRef::Column(c)
    }
}

impl fmt::Display for SchemaRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaRef::Table { name } => f.write_str(name),
            SchemaRef::Column(c) => c.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type", default)]
    pub column_type: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, column_type: ColumnType) -> Self {
        Column {
            name: name.into(),
            column_type,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableDef {
    name: String,
    columns: Vec<Column>,
    primary_key: Vec<String>,
}

impl TableDef {
    pub fn new(
        name: impl Into<String>,
        columns: Vec<Column>,
        primary_key: Vec<String>,
    ) -> Result<Self, SchemaError> {
        let name = name.into();
        if name.is_empty() {
            return Err(SchemaError::EmptyIdentifier("table name"));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if c.name.is_empty() {
                return Err(SchemaError::EmptyIdentifier("column name"));
            }
            if !seen.insert(ident_key(&c.name)) {
                return Err(SchemaError::DuplicateColumn {
                    table: name,
                    column: c.name.clone(),
                });
            }
        }
        let mut pk: Vec<String> = Vec::with_capacity(primary_key.len());
        for key in primary_key {
            let Some(col) = columns.iter().find(|c| same_ident(&c.name, &key)) else {
                return Err(SchemaError::PrimaryKeyNotColumn {
                    table: name,
                    column: key,
                });
            };
            if !pk.iter().any(|k| same_ident(k, &col.name)) {
                pk.push(col.name.clone());
            }
        }
        Ok(TableDef {
            name,
            columns,
            primary_key: pk,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn primary_key(&self) -> &[String] {
        &self.primary_key
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| same_ident(&c.name, name))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_some()
    }

    pub fn is_primary_key(&self, column: &str) -> bool {
        self.primary_key.iter().any(|k| same_ident(k, column))
    }

    pub fn column_refs(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.columns
            .iter()
            .map(|c| ColumnRef::typed(self.name.clone(), c.name.clone(), c.column_type))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: ColumnRef,
    pub to: ColumnRef,
}

impl ForeignKey {
    pub fn new(from: ColumnRef, to: ColumnRef) -> Self {
        ForeignKey { from, to }
    }
}

impl fmt::Display for ForeignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

/// Tables, columns and keys of one database, or of the part of it an agent
/// knows about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    db_id: String,
    tables: Vec<TableDef>,
    foreign_keys: Vec<ForeignKey>,
}

impl Schema {
    pub fn new(
        db_id: impl Into<String>,
        tables: Vec<TableDef>,
        foreign_keys: Vec<ForeignKey>,
    ) -> Result<Self, SchemaError> {
        let db_id = db_id.into();
        let mut seen = HashSet::new();
        for t in &tables {
            if !seen.insert(ident_key(&t.name)) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
        }
        let mut schema = Schema {
            db_id,
            tables,
            foreign_keys: Vec::new(),
        };
        let mut keys: Vec<ForeignKey> = Vec::with_capacity(foreign_keys.len());
        for fk in foreign_keys {
            let (Some(from), Some(to)) = (schema.resolve(&fk.from), schema.resolve(&fk.to)) else {
                return Err(SchemaError::DanglingForeignKey(fk.to_string()));
            };
            let fk = ForeignKey::new(from, to);
            if !keys.contains(&fk) {
                keys.push(fk);
            }
        }
        schema.foreign_keys = keys;
        Ok(schema)
    }

    /// The schema with no tables and no keys.
    pub fn empty(db_id: impl Into<String>) -> Self {
        Schema {
            db_id: db_id.into(),
            tables: Vec::new(),
            foreign_keys: Vec::new(),
        }
    }

    pub fn builder(db_id: impl Into<String>) -> SchemaBuilder {
        SchemaBuilder {
            db_id: db_id.into(),
            tables: Vec::new(),
            foreign_keys: Vec::new(),
        }
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn tables(&self) -> &[TableDef] {
        &self.tables
    }

    pub fn foreign_keys(&self) -> &[ForeignKey] {
        &self.foreign_keys
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| same_ident(&t.name, name))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.iter().map(|t| t.name.as_str())
    }

    pub fn contains_table(&self, name: &str) -> bool {
        self.table(name).is_some()
    }

    pub fn contains_column(&self, table: &str, column: &str) -> bool {
        self.table(table).is_some_and(|t| t.has_column(column))
    }

    pub fn contains(&self, r: &SchemaRef) -> bool {
        match r {
            SchemaRef::Table { name } => self.contains_table(name),
            SchemaRef::Column(c) => self.contains_column(&c.table_name, &c.column_name),
        }
    }

    /// Returns the stored spelling and type of a column reference.
    pub fn resolve(&self, r: &ColumnRef) -> Option<ColumnRef> {
        let t = self.table(&r.table_name)?;
        let c = t.column(&r.column_name)?;
        Some(ColumnRef::typed(t.name.clone(), c.name.clone(), c.column_type))
    }

    pub fn column_refs(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.tables.iter().flat_map(TableDef::column_refs)
    }

    /// Every table and column as membership references.
    pub fn refs(&self) -> Vec<SchemaRef> {
        let mut out = Vec::new();
        for t in &self.tables {
            out.push(SchemaRef::table(t.name.clone()));
            out.extend(t.column_refs().map(SchemaRef::Column));
        }
        out
    }

    /// True when every table, column and foreign key of `self` is in `other`.
    pub fn is_contained_in(&self, other: &Schema) -> bool {
        self.tables.iter().all(|t| {
            other
                .table(&t.name)
                .is_some_and(|o| t.columns.iter().all(|c| o.has_column(&c.name)))
        }) && self.foreign_keys.iter().all(|k| other.foreign_keys.contains(k))
    }

    /// Canonical form for order-insensitive comparison: tables, columns,
    /// primary keys and foreign keys sorted by lowercased name, identifiers
    /// lowercased.
    pub fn normalized(&self) -> Schema {
        let mut tables: Vec<TableDef> = self
            .tables
            .iter()
            .map(|t| {
                let mut columns: Vec<Column> = t
                    .columns
                    .iter()
                    .map(|c| Column::new(ident_key(&c.name), c.column_type))
                    .collect();
                columns.sort_by(|a, b| a.name.cmp(&b.name));
                let mut primary_key: Vec<String> = t.primary_key.iter().map(|k| ident_key(k)).collect();
                primary_key.sort();
                TableDef {
                    name: ident_key(&t.name),
                    columns,
                    primary_key,
                }
            })
            .collect();
        tables.sort_by(|a, b| a.name.cmp(&b.name));
        let mut foreign_keys: Vec<ForeignKey> = self
            .foreign_keys
            .iter()
            .map(|k| {
                ForeignKey::new(
                    ColumnRef::new(ident_key(&k.from.table_name), ident_key(&k.from.column_name)),
                    ColumnRef::new(ident_key(&k.to.table_name), ident_key(&k.to.column_name)),
                )
            })
            .collect();
        foreign_keys.sort();
        Schema {
            db_id: ident_key(&self.db_id),
            tables,
            foreign_keys,
        }
    }

    /// Keeps the named tables (with all their columns) and the keys that stay
    /// inside them. Table order follows `self`.
    pub fn restrict_to_tables<S: AsRef<str>>(&self, names: &[S]) -> Schema {
        let keep = |t: &str| names.iter().any(|n| same_ident(n.as_ref(), t));
        let tables: Vec<TableDef> = self.tables.iter().filter(|t| keep(&t.name)).cloned().collect();
        let foreign_keys = self
            .foreign_keys
            .iter()
            .filter(|k| keep(&k.from.table_name) && keep(&k.to.table_name))
            .cloned()
            .collect();
        Schema {
            db_id: self.db_id.clone(),
            tables,
            foreign_keys,
        }
    }

    /// Column names of `table` that take part in a foreign key, in key order.
    fn key_endpoint_columns(&self, table: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for k in &self.foreign_keys {
            for end in [&k.from, &k.to] {
                if same_ident(&end.table_name, table) && !out.iter().any(|c| same_ident(c, &end.column_name)) {
                    out.push(end.column_name.clone());
                }
            }
        }
        out
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{{", self.db_id)?;
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:[", t.name)?;
            for (j, c) in t.columns.iter().enumerate() {
                if j > 0 {
                    f.write_str(",")?;
                }
                f.write_str(&c.name)?;
            }
            f.write_str("]")?;
        }
        f.write_str("}")
    }
}

pub struct SchemaBuilder {
    db_id: String,
    tables: Vec<(String, Vec<Column>, Vec<String>)>,
    foreign_keys: Vec<ForeignKey>,
}

impl SchemaBuilder {
    /// Adds a table whose columns all have [`ColumnType::Other`].
    pub fn table(self, name: &str, columns: &[&str]) -> Self {
        let cols = columns.iter().map(|c| (*c, ColumnType::Other)).collect::<Vec<_>>();
        self.typed_table(name, &cols)
    }

    pub fn typed_table(mut self, name: &str, columns: &[(&str, ColumnType)]) -> Self {
        let cols = columns.iter().map(|(c, t)| Column::new(*c, *t)).collect();
        self.tables.push((name.to_string(), cols, Vec::new()));
        self
    }

    /// Sets the primary key of the most recently added table.
    pub fn primary_key(mut self, columns: &[&str]) -> Self {
        if let Some(last) = self.tables.last_mut() {
            last.2 = columns.iter().map(|c| c.to_string()).collect();
        }
        self
    }

    pub fn foreign_key(mut self, from: (&str, &str), to: (&str, &str)) -> Self {
        self.foreign_keys.push(ForeignKey::new(
            ColumnRef::new(from.0, from.1),
            ColumnRef::new(to.0, to.1),
        ));
        self
    }

    pub fn build(self) -> Result<Schema, SchemaError> {
        let tables = self
            .tables
            .into_iter()
            .map(|(name, cols, pk)| TableDef::new(name, cols, pk))
            .collect::<Result<Vec<_>, _>>()?;
        Schema::new(self.db_id, tables, self.foreign_keys)
    }
}

// JSON shape:
// { "db_id": "...",
//   "tables": [ { "name": "emp", "columns": [ {"name": "id", "type": "number"} ], "primary_key": ["id"] } ],
//   "foreign_keys": [ ["emp", "dept_id", "dept", "id"] ] }

#[derive(Serialize, Deserialize)]
struct TableDoc {
    name: String,
    columns: Vec<Column>,
    #[serde(default)]
    primary_key: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDoc {
    db_id: String,
    #[serde(default)]
    tables: Vec<TableDoc>,
    #[serde(default)]
    foreign_keys: Vec<[String; 4]>,
}

impl Serialize for Schema {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let doc = SchemaDoc {
            db_id: self.db_id.clone(),
            tables: self
                .tables
                .iter()
                .map(|t| TableDoc {
                    name: t.name.clone(),
                    columns: t.columns.clone(),
                    primary_key: t.primary_key.clone(),
                })
                .collect(),
            foreign_keys: self
                .foreign_keys
                .iter()
                .map(|k| {
                    [
                        k.from.table_name.clone(),
                        k.from.column_name.clone(),
                        k.to.table_name.clone(),
                        k.to.column_name.clone(),
                    ]
                })
                .collect(),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = SchemaDoc::deserialize(deserializer)?;
        let tables = doc
            .tables
            .into_iter()
            .map(|t| TableDef::new(t.name, t.columns, t.primary_key))
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        let keys = doc
            .foreign_keys
            .into_iter()
            .map(|[ft, fc, tt, tc]| ForeignKey::new(ColumnRef::new(ft, fc), ColumnRef::new(tt, tc)))
            .collect();
        Schema::new(doc.db_id, tables, keys).map_err(serde::de::Error::custom)
    }
}

impl<'de> Deserialize<'de> for TableDef {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = TableDoc::deserialize(deserializer)?;
        TableDef::new(doc.name, doc.columns, doc.primary_key).map_err(serde::de::Error::custom)
    }
}

/// Tables and columns an agent judged relevant, before retention padding.
/// Entries keep insertion order; duplicates are folded case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSelection {
    entries: Vec<SelectionEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub table: String,
    pub columns: Vec<String>,
}

impl SchemaSelection {
    pub fn new() -> Self {
        Self::default()
    }

    /// Selects every table and column of `schema`.
    pub fn all_of(schema: &Schema) -> Self {
        let mut sel = Self::new();
        for t in schema.tables() {
            sel.add_table(t.name());
            for c in t.columns() {
                sel.add_column(t.name(), &c.name);
            }
        }
        sel
    }

    pub fn entries(&self) -> &[SelectionEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add_table(&mut self, table: &str) -> &mut SelectionEntry {
        let idx = match self.entries.iter().position(|e| same_ident(&e.table, table)) {
            Some(i) => i,
            None => {
                self.entries.push(SelectionEntry {
                    table: table.to_string(),
                    columns: Vec::new(),
                });
                self.entries.len() - 1
            }
        };
        &mut self.entries[idx]
    }

    pub fn add_column(&mut self, table: &str, column: &str) {
        let entry = self.add_table(table);
        if !entry.columns.iter().any(|c| same_ident(c, column)) {
            entry.columns.push(column.to_string());
        }
    }

    pub fn add_ref(&mut self, r: &SchemaRef) {
        match r {
            SchemaRef::Table { name } => {
                self.add_table(name);
            }
            SchemaRef::Column(c) => self.add_column(&c.table_name, &c.column_name),
        }
    }

    pub fn entry(&self, table: &str) -> Option<&SelectionEntry> {
        self.entries.iter().find(|e| same_ident(&e.table, table))
    }

    pub fn contains(&self, r: &SchemaRef) -> bool {
        match r {
            SchemaRef::Table { name } => self.entry(name).is_some(),
            SchemaRef::Column(c) => self
                .entry(&c.table_name)
                .is_some_and(|e| e.columns.iter().any(|x| same_ident(x, &c.column_name))),
        }
    }

    pub fn remove(&mut self, r: &SchemaRef) {
        match r {
            SchemaRef::Table { name } => self.entries.retain(|e| !same_ident(&e.table, name)),
            SchemaRef::Column(c) => {
                if let Some(e) = self.entries.iter_mut().find(|e| same_ident(&e.table, &c.table_name)) {
                    e.columns.retain(|x| !same_ident(x, &c.column_name));
                }
            }
        }
    }

    pub fn validate_against(&self, schema: &Schema) -> Result<(), SchemaError> {
        for e in &self.entries {
            let Some(t) = schema.table(&e.table) else {
                return Err(SchemaError::UnknownSelectedTable(e.table.clone()));
            };
            for c in &e.columns {
                if !t.has_column(c) {
                    return Err(SchemaError::UnknownSelectedColumn {
                        table: e.table.clone(),
                        column: c.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Drops entries that do not exist in `schema`, returning the cleaned
    /// selection and the dropped references.
    pub fn sanitized(&self, schema: &Schema) -> (SchemaSelection, Vec<SchemaRef>) {
        let mut clean = SchemaSelection::new();
        let mut dropped = Vec::new();
        for e in &self.entries {
            let Some(t) = schema.table(&e.table) else {
                dropped.push(SchemaRef::table(e.table.clone()));
                continue;
            };
            clean.add_table(t.name());
            for c in &e.columns {
                match t.column(c) {
                    Some(col) => clean.add_column(t.name(), &col.name),
                    None => dropped.push(SchemaRef::column(e.table.clone(), c.clone())),
                }
            }
        }
        (clean, dropped)
    }
}

/// Joins two schemas of the same database.
///
/// Tables present on one side are kept with their columns; tables present on
/// both sides get the union of their columns (the left side's order, then the
/// right side's new columns). Either side may be the empty schema regardless
/// of its `db_id`.
pub fn merge_schemas(a: &Schema, b: &Schema) -> Result<Schema, SchemaError> {
    if !a.is_empty() && !b.is_empty() && !same_ident(&a.db_id, &b.db_id) {
        return Err(SchemaError::MergeConflict {
            left: a.db_id.clone(),
            right: b.db_id.clone(),
        });
    }
    let db_id = if !a.is_empty() || b.is_empty() { a.db_id.clone() } else { b.db_id.clone() };

    let mut tables: Vec<TableDef> = Vec::with_capacity(a.tables.len() + b.tables.len());
    for ta in &a.tables {
        let mut t = ta.clone();
        if let Some(tb) = b.table(&ta.name) {
            for c in &tb.columns {
                if !t.has_column(&c.name) {
                    t.columns.push(c.clone());
                }
            }
            for k in &tb.primary_key {
                if !t.is_primary_key(k) {
                    t.primary_key.push(k.clone());
                }
            }
        }
        tables.push(t);
    }
    for tb in &b.tables {
        if a.table(&tb.name).is_none() {
            tables.push(tb.clone());
        }
    }

    let mut foreign_keys = a.foreign_keys.clone();
    for k in &b.foreign_keys {
        if !foreign_keys.contains(k) {
            foreign_keys.push(k.clone());
        }
    }
    Ok(Schema {
        db_id,
        tables,
        foreign_keys,
    })
}

/// Membership test for a table or a column, ignoring case.
pub fn schema_contains(schema: &Schema, r: &SchemaRef) -> bool {
    schema.contains(r)
}

/// Cuts `selection` out of `source`, padding every selected table up to
/// `min(retention_floor, table size)` columns.
///
/// Padding takes primary-key columns first, then foreign-key endpoint
/// columns, then the remaining columns in source order. Foreign keys survive
/// when both endpoints do.
pub fn extract_subschema(
    source: &Schema,
    selection: &SchemaSelection,
    retention_floor: usize,
) -> Result<Schema, SchemaError> {
    selection.validate_against(source)?;
    let mut tables = Vec::new();
    for t in &source.tables {
        let Some(entry) = selection.entry(&t.name) else {
            continue;
        };
        let mut kept: Vec<Column> = Vec::new();
        let keep = |kept: &mut Vec<Column>, name: &str| {
            if let Some(c) = t.column(name) {
                if !kept.iter().any(|k| same_ident(&k.name, &c.name)) {
                    kept.push(c.clone());
                }
            }
        };
        for c in &entry.columns {
            keep(&mut kept, c);
        }
        let floor = retention_floor.min(t.columns.len());
        if kept.len() < floor {
            let priority = t
                .primary_key
                .iter()
                .cloned()
                .chain(source.key_endpoint_columns(&t.name))
                .chain(t.columns.iter().map(|c| c.name.clone()));
            for name in priority {
                if kept.len() >= floor {
                    break;
                }
                keep(&mut kept, &name);
            }
        }
        let primary_key = t
            .primary_key
            .iter()
            .filter(|k| kept.iter().any(|c| same_ident(&c.name, k)))
            .cloned()
            .collect();
        tables.push(TableDef {
            name: t.name.clone(),
            columns: kept,
            primary_key,
        });
    }
    let mut out = Schema {
        db_id: source.db_id.clone(),
        tables,
        foreign_keys: Vec::new(),
    };
    out.foreign_keys = source
        .foreign_keys
        .iter()
        .filter(|k| out.resolve(&k.from).is_some() && out.resolve(&k.to).is_some())
        .cloned()
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// One schema holding a random half (rounded down) of the tables.
    HalfToOne,
    /// `n` disjoint schemas covering every table, sizes within one.
    EqualSplit,
}

/// Splits the tables of `source` between agents; deterministic for a seed.
///
/// Foreign keys go to a part only when both endpoints land in it.
pub fn partition_schema(
    source: &Schema,
    parts: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Vec<Schema>, SchemaError> {
    if parts == 0 {
        return Err(SchemaError::ZeroParts);
    }
    let total = source.tables.len();
    if mode == PartitionMode::EqualSplit && parts == 1 {
        return Ok(vec![source.clone()]);
    }
    if mode == PartitionMode::EqualSplit && parts > total {
        return Err(SchemaError::InfeasiblePartition { parts, tables: total });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        let names: Vec<&str> = idx.iter().map(|&i| source.tables[i].name.as_str()).collect();
        source.restrict_to_tables(&names)
    };

    match mode {
        PartitionMode::HalfToOne => Ok(vec![pick(&order[..total / 2])]),
        PartitionMode::EqualSplit => {
            let base = total / parts;
            let extra = total % parts;
            let mut out = Vec::with_capacity(parts);
            let mut start = 0;
            for p in 0..parts {
                let len = base + usize::from(p < extra);
                out.push(pick(&order[start..start + len]));
                start += len;
            }
            Ok(out)
        }
    }
}

/// Fraction of `reference` found in `schema`; 1.0 for an empty reference set.
pub fn schema_match_score(schema: &Schema, reference: &[SchemaRef]) -> f64 {
    if reference.is_empty() {
        return 1.0;
    }
    let hit = reference.iter().filter(|r| schema.contains(r)).count();
    hit as f64 / reference.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emp_dept() -> Schema {
        Schema::builder("company")
            .table("emp", &["id", "name", "age", "dept_id"])
            .primary_key(&["id"])
            .table("dept", &["id", "title"])
            .primary_key(&["id"])
            .foreign_key(("emp", "dept_id"), ("dept", "id"))
            .build()
            .unwrap()
    }

    fn cols(s: &Schema, t: &str) -> Vec<String> {
        s.table(t).unwrap().columns().iter().map(|c| c.name.clone()).collect()
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let a = Schema::builder("db").table("emp", &["id", "name"]).build().unwrap();
        let m = merge_schemas(&a, &Schema::empty("")).unwrap();
        assert_eq!(m, a);
        let m = merge_schemas(&Schema::empty(""), &a).unwrap();
        assert_eq!(m, a);
    }

    #[test]
    fn merge_unions_columns_of_shared_tables() {
        let a = Schema::builder("db").table("emp", &["id", "name"]).build().unwrap();
        let b = Schema::builder("db")
            .table("emp", &["name", "dept_id"])
            .table("dept", &["id"])
            .build()
            .unwrap();
        let m = merge_schemas(&a, &b).unwrap();
        assert_eq!(cols(&m, "emp"), ["id", "name", "dept_id"]);
        assert_eq!(cols(&m, "dept"), ["id"]);
        assert_eq!(m.table_names().collect::<Vec<_>>(), ["emp", "dept"]);
    }

    #[test]
    fn merge_keeps_disjoint_tables() {
        let a = Schema::builder("db").table("a", &["x"]).build().unwrap();
        let b = Schema::builder("db").table("b", &["y"]).build().unwrap();
        let m = merge_schemas(&a, &b).unwrap();
        assert_eq!(cols(&m, "a"), ["x"]);
        assert_eq!(cols(&m, "b"), ["y"]);
    }

    #[test]
    fn merge_rejects_different_databases() {
        let a = Schema::builder("one").table("a", &["x"]).build().unwrap();
        let b = Schema::builder("two").table("b", &["y"]).build().unwrap();
        assert!(matches!(merge_schemas(&a, &b), Err(SchemaError::MergeConflict { .. })));
    }

    #[test]
    fn merge_is_case_insensitive() {
        let a = Schema::builder("db").table("Emp", &["ID"]).build().unwrap();
        let b = Schema::builder("DB").table("emp", &["id", "name"]).build().unwrap();
        let m = merge_schemas(&a, &b).unwrap();
        assert_eq!(m.table_count(), 1);
        assert_eq!(cols(&m, "emp"), ["ID", "name"]);
    }

    #[test]
    fn extract_pads_with_primary_key() {
        let s = emp_dept();
        let mut sel = SchemaSelection::new();
        sel.add_column("emp", "name");
        let out = extract_subschema(&s, &sel, 2).unwrap();
        assert_eq!(cols(&out, "emp"), ["name", "id"]);
        assert_eq!(out.table("emp").unwrap().primary_key(), ["id"]);
    }

    #[test]
    fn extract_pads_foreign_key_endpoints_after_primary_key() {
        let s = emp_dept();
        let mut sel = SchemaSelection::new();
        sel.add_column("emp", "name");
        let out = extract_subschema(&s, &sel, 3).unwrap();
        assert_eq!(cols(&out, "emp"), ["name", "id", "dept_id"]);
    }

    #[test]
    fn extract_without_floor_keeps_selection_only() {
        let s = emp_dept();
        let mut sel = SchemaSelection::new();
        sel.add_column("emp", "age");
        sel.add_column("emp", "name");
        let out = extract_subschema(&s, &sel, 0).unwrap();
        assert_eq!(cols(&out, "emp"), ["age", "name"]);
        assert!(out.table("emp").unwrap().primary_key().is_empty());
    }

    #[test]
    fn extract_floor_clamps_to_table_size() {
        let s = Schema::builder("db").table("t", &["only"]).build().unwrap();
        let mut sel = SchemaSelection::new();
        sel.add_table("t");
        let out = extract_subschema(&s, &sel, 3).unwrap();
        assert_eq!(cols(&out, "t"), ["only"]);
    }

    #[test]
    fn extract_keeps_keys_whose_endpoints_survive() {
        let s = emp_dept();
        let mut sel = SchemaSelection::new();
        sel.add_column("emp", "dept_id");
        sel.add_column("dept", "id");
        let out = extract_subschema(&s, &sel, 0).unwrap();
        assert_eq!(out.foreign_keys().len(), 1);
        let mut sel = SchemaSelection::new();
        sel.add_column("emp", "dept_id");
        let out = extract_subschema(&s, &sel, 0).unwrap();
        assert!(out.foreign_keys().is_empty());
    }

    #[test]
    fn extract_rejects_unknown_identifiers() {
        let s = emp_dept();
        let mut sel = SchemaSelection::new();
        sel.add_column("emp", "salary");
        assert!(matches!(
            extract_subschema(&s, &sel, 2),
            Err(SchemaError::UnknownSelectedColumn { .. })
        ));
        let mut sel = SchemaSelection::new();
        sel.add_table("payroll");
        assert!(matches!(
            extract_subschema(&s, &sel, 2),
            Err(SchemaError::UnknownSelectedTable(_))
        ));
    }

    fn four_tables() -> Schema {
        Schema::builder("db")
            .table("a", &["id"])
            .table("b", &["id", "a_id"])
            .table("c", &["id"])
            .table("d", &["id"])
            .foreign_key(("b", "a_id"), ("a", "id"))
            .build()
            .unwrap()
    }

    #[test]
    fn equal_split_is_disjoint_and_covering() {
        let s = four_tables();
        let parts = partition_schema(&s, 2, PartitionMode::EqualSplit, 0).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].table_count(), 2);
        assert_eq!(parts[1].table_count(), 2);
        let mut all: Vec<String> = parts.iter().flat_map(|p| p.table_names().map(String::from)).collect();
        all.sort();
        assert_eq!(all, ["a", "b", "c", "d"]);
        assert_eq!(parts, partition_schema(&s, 2, PartitionMode::EqualSplit, 0).unwrap());
    }

    #[test]
    fn half_to_one_takes_half_the_tables() {
        let s = four_tables();
        let parts = partition_schema(&s, 1, PartitionMode::HalfToOne, 7).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].table_count(), 2);
        for t in parts[0].tables() {
            assert_eq!(t, s.table(t.name()).unwrap());
        }
    }

    #[test]
    fn single_part_is_identity() {
        let s = four_tables();
        assert_eq!(partition_schema(&s, 1, PartitionMode::EqualSplit, 3).unwrap(), vec![s]);
    }

    #[test]
    fn too_many_parts_is_infeasible() {
        let s = four_tables();
        assert_eq!(
            partition_schema(&s, 5, PartitionMode::EqualSplit, 0),
            Err(SchemaError::InfeasiblePartition { parts: 5, tables: 4 })
        );
        assert_eq!(partition_schema(&s, 0, PartitionMode::EqualSplit, 0), Err(SchemaError::ZeroParts));
    }

    #[test]
    fn cross_part_keys_are_dropped() {
        let s = four_tables();
        for seed in 0..20 {
            for p in partition_schema(&s, 4, PartitionMode::EqualSplit, seed).unwrap() {
                assert!(p.foreign_keys().is_empty());
            }
        }
    }

    #[test]
    fn match_score_counts_present_refs() {
        let s = Schema::builder("db").table("emp", &["id"]).build().unwrap();
        let refs = [SchemaRef::column("emp", "id"), SchemaRef::column("dept", "id")];
        assert_eq!(schema_match_score(&Schema::empty("db"), &refs), 0.0);
        assert_eq!(schema_match_score(&s, &refs), 0.5);
        assert_eq!(schema_match_score(&s, &refs[..1]), 1.0);
        assert_eq!(schema_match_score(&s, &[]), 1.0);
    }

    #[test]
    fn contains_ignores_case() {
        let s = Schema::builder("db").table("emp", &["id"]).build().unwrap();
        assert!(schema_contains(&s, &SchemaRef::column("emp", "id")));
        assert!(schema_contains(&s, &SchemaRef::column("EMP", "ID")));
        assert!(!schema_contains(&s, &SchemaRef::column("dept", "id")));
        assert!(schema_contains(&s, &SchemaRef::table("Emp")));
    }

    #[test]
    fn constructor_enforces_invariants() {
        assert!(matches!(
            Schema::builder("db").table("t", &["a", "A"]).build(),
            Err(SchemaError::DuplicateColumn { .. })
        ));
        assert!(matches!(
            Schema::builder("db").table("t", &["a"]).table("T", &["b"]).build(),
            Err(SchemaError::DuplicateTable(_))
        ));
        assert!(matches!(
            Schema::builder("db").table("t", &["a"]).primary_key(&["b"]).build(),
            Err(SchemaError::PrimaryKeyNotColumn { .. })
        ));
        assert!(matches!(
            Schema::builder("db").table("t", &["a"]).foreign_key(("t", "a"), ("u", "id")).build(),
            Err(SchemaError::DanglingForeignKey(_))
        ));
        assert!(Schema::builder("db").build().unwrap().is_empty());
    }

    #[test]
    fn json_shape_round_trips() {
        let s = emp_dept();
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["foreign_keys"][0], serde_json::json!(["emp", "dept_id", "dept", "id"]));
        assert_eq!(json["tables"][0]["primary_key"], serde_json::json!(["id"]));
        let back: Schema = serde_json::from_value(json).unwrap();
        assert_eq!(back, s);
        let bad = serde_json::json!({"db_id": "x", "tables": [], "foreign_keys": [["a","b","c","d"]]});
        assert!(serde_json::from_value::<Schema>(bad).is_err());
    }

    #[test]
    fn selection_sanitize_drops_unknown() {
        let s = emp_dept();
        let mut sel = SchemaSelection::new();
        sel.add_column("EMP", "Name");
        sel.add_column("emp", "salary");
        sel.add_table("payroll");
        let (clean, dropped) = sel.sanitized(&s);
        assert_eq!(clean.entries().len(), 1);
        assert_eq!(clean.entries()[0].table, "emp");
        assert_eq!(clean.entries()[0].columns, ["name"]);
        assert_eq!(dropped.len(), 2);
    }
}
