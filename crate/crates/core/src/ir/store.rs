use super::types::LambdaProgram;

/// Byte store backing one lambda's globals, objects laid out back to back
/// (8-byte aligned) in declaration order. Persists across requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatStore {
    objects: Vec<(String, usize, usize)>,
    bytes: Vec<u8>,
}

impl FlatStore {
    pub fn for_lambda(lambda: &LambdaProgram) -> Self {
        let mut objects = Vec::new();
        let mut bytes = Vec::new();
        for g in &lambda.globals {
            let base = bytes.len().next_multiple_of(8);
            bytes.resize(base, 0);
            bytes.extend_from_slice(&g.image());
            objects.push((g.name.clone(), base, g.size as usize));
        }
        FlatStore { objects, bytes }
    }

    fn find(&self, name: &str) -> Option<(usize, usize)> {
        self.objects
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, b, s)| (*b, *s))
    }

    pub fn object(&self, name: &str) -> Option<&[u8]> {
        self.find(name).map(|(b, s)| &self.bytes[b..b + s])
    }

    pub fn object_mut(&mut self, name: &str) -> Option<&mut [u8]> {
        self.find(name).map(move |(b, s)| &mut self.bytes[b..b + s])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.objects.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GlobalObject, Pragma};

    #[test]
    fn objects_are_aligned_and_initialized() {
        let l = LambdaProgram {
            name: "l".into(),
            entry: "main".into(),
            functions: vec![],
            globals: vec![
                GlobalObject::new("a", 3, Pragma::None).with_init(vec![1, 2]),
                GlobalObject::new("b", 4, Pragma::Hot).with_init(vec![9; 4]),
            ],
        };
        let s = FlatStore::for_lambda(&l);
        assert_eq!(s.object("a").unwrap(), &[1, 2, 0]);
        assert_eq!(s.object("b").unwrap(), &[9; 4]);
        assert_eq!(s.len(), 12);
        assert!(s.object("c").is_none());
    }
}
