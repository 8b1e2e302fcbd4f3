"""Container-organized encrypted resource storage for one pod.

Every payload is sealed with a fresh AES-GCM key per write. Erasure is
crypto-shredding: the keys for a resource are destroyed and the ciphertext
kept, so audit records that reference the resource stay intact while the
plaintext becomes unrecoverable. Reads authenticate the ciphertext, so a
corrupted store surfaces as an integrity error, never as garbage bytes.

Persistence (optional) is an append-only record file per pod plus a
mutable key-store file; see the README for the exact byte layout.
"""

from __future__ import annotations

import io
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import codec
from .crypto import AEAD_NONCE_LEN, DeterministicRng, aead_decrypt, aead_encrypt
from .errors import (
    ContainerMissingError,
    NotAContainerError,
    NotFoundError,
    ValidationError,
)

SECURE_SCHEME = "https"
INSECURE_SCHEME = "http"

_RECORDS_MAGIC = b"PGR1"
_KEYS_MAGIC = b"PGK1"
_REC_WRITE = 1
_REC_ERASE = 2
_REC_CONTAINER = 3


@dataclass(frozen=True, order=True)
class ResourceUri:
    """Normalized secure-scheme resource address.

    ``path`` always starts with ``/``; container paths end with ``/``.
    Dot segments and empty segments are rejected rather than resolved, so
    there is exactly one spelling for every resource.
    """

    host: str
    path: str

    def __post_init__(self):
        if not self.host or "/" in self.host:
            raise ValidationError(f"invalid host: {self.host!r}")
        _check_path(self.path)

    @classmethod
    def parse(cls, raw: str) -> "ResourceUri":
        scheme, sep, rest = raw.partition("://")
        if not sep or scheme != SECURE_SCHEME:
            raise ValidationError(f"expected {SECURE_SCHEME} URI, got {raw!r}")
        host, slash, path = rest.partition("/")
        return cls(host=host, path="/" + path if slash else "/")

    @property
    def is_container(self) -> bool:
        return self.path.endswith("/")

    @property
    def parent(self) -> "ResourceUri | None":
        if self.path == "/":
            return None
        trimmed = self.path.rstrip("/")
        parent_path = trimmed.rsplit("/", 1)[0] + "/"
        return ResourceUri(self.host, parent_path)

    def __str__(self) -> str:
        return f"{SECURE_SCHEME}://{self.host}{self.path}"


def _check_path(path: str) -> None:
    if not path.startswith("/"):
        raise ValidationError(f"path must be absolute: {path!r}")
    if path == "/":
        return
    segments = path[1:].rstrip("/").split("/")
    for seg in segments:
        if seg in ("", ".", ".."):
            raise ValidationError(f"path not normalized: {path!r}")


@dataclass(frozen=True)
class Resource:
    uri: ResourceUri
    content_type: str
    payload_ciphertext: bytes  # AEAD nonce prepended
    key_id: str
    version: int
    erased: bool


@dataclass
class Container:
    uri: ResourceUri
    members: set[ResourceUri] = field(default_factory=set)


@dataclass(frozen=True)
class ErasureReceipt:
    uri: ResourceUri
    erased_at_ms: int
    destroyed_key_ids: tuple[str, ...]


class PodStore:
    """Resource store for a single pod. Safe to share across handlers;
    writes are serialized, reads are lock-free snapshots of immutable
    ``Resource`` values."""

    def __init__(
        self,
        host: str,
        rng: DeterministicRng | None = None,
        data_dir: str | Path | None = None,
        auto_create_containers: bool = False,
    ):
        self.host = host
        self.auto_create_containers = auto_create_containers
        self._rng = rng or DeterministicRng.system()
        self._lock = threading.RLock()
        self._resources: dict[str, Resource] = {}
        self._containers: dict[str, Container] = {}
        self._keys: dict[str, bytes] = {}
        # key ids ever used per resource path, for full shredding on erase
        self._key_history: dict[str, list[str]] = {}
        self._records_path: Path | None = None
        self._keys_path: Path | None = None
        if data_dir is not None:
            data_dir = Path(data_dir)
            data_dir.mkdir(parents=True, exist_ok=True)
            self._records_path = data_dir / "pod.records"
            self._keys_path = data_dir / "pod.keys"
            if self._records_path.exists():
                self._load()
        root = ResourceUri(host, "/")
        self._containers.setdefault(root.path, Container(root))

    # -- container operations --------------------------------------------

    def create_container(self, uri: ResourceUri) -> Container:
        if not uri.is_container:
            raise ValidationError(f"container paths end with '/': {uri}")
        with self._lock:
            parent = uri.parent
            if parent is not None and parent.path not in self._containers:
                if not self.auto_create_containers:
                    raise ContainerMissingError(f"no such container: {parent}")
                self.create_container(parent)
            container = self._containers.get(uri.path)
            if container is None:
                container = Container(uri)
                self._containers[uri.path] = container
                if parent is not None:
                    self._containers[parent.path].members.add(uri)
                self._persist_container(uri)
            return container

    def has_container(self, uri: ResourceUri) -> bool:
        return uri.path in self._containers

    def list_container(self, uri: ResourceUri) -> list[ResourceUri]:
        """Live members only; erased resources are invisible here and
        observable solely through the audit ledger."""
        container = self._containers.get(uri.path)
        if container is None:
            if uri.path in self._resources:
                raise NotAContainerError(str(uri))
            raise NotFoundError(str(uri))
        out = []
        for member in sorted(container.members):
            res = self._resources.get(member.path)
            if res is not None and res.erased:
                continue
            out.append(member)
        return out

    # -- resource operations ----------------------------------------------

    def exists(self, uri: ResourceUri) -> bool:
        if uri.is_container:
            return uri.path in self._containers
        res = self._resources.get(uri.path)
        return res is not None and not res.erased

    def put_resource(
        self, uri: ResourceUri, content_type: str, payload: bytes
    ) -> Resource:
        """Encrypt and store; overwriting an erased resource un-erases it
        under a fresh key. Authorization happens in the decision engine
        before this is reached."""
        if uri.is_container:
            raise ValidationError("cannot PUT a container path")
        if uri.host != self.host:
            raise ValidationError(f"resource {uri} does not belong to pod {self.host}")
        with self._lock:
            parent = uri.parent
            assert parent is not None
            if parent.path not in self._containers:
                if not self.auto_create_containers:
                    raise ContainerMissingError(f"no such container: {parent}")
                self.create_container(parent)
            previous = self._resources.get(uri.path)
            version = 1 if previous is None else previous.version + 1
            key_id = f"k-{self._rng.hex(8)}"
            key = self._rng.bytes(32)
            nonce = self._rng.bytes(AEAD_NONCE_LEN)
            aad = codec.canonical_json(
                {"uri": str(uri), "version": version, "content_type": content_type}
            )
            blob = nonce + aead_encrypt(key, nonce, payload, aad)
            resource = Resource(
                uri=uri,
                content_type=content_type,
                payload_ciphertext=blob,
                key_id=key_id,
                version=version,
                erased=False,
            )
            self._keys[key_id] = key
            self._key_history.setdefault(uri.path, []).append(key_id)
            self._resources[uri.path] = resource
            self._containers[parent.path].members.add(uri)
            self._persist_write(resource)
            self._persist_keys()
            return resource

    def get_resource(self, uri: ResourceUri) -> tuple[Resource, bytes]:
        """Return the resource and its decrypted payload.

        Erased resources raise ``NotFoundError``: at the decision layer
        they are indistinguishable from resources that never existed.
        """
        res = self._resources.get(uri.path)
        if res is None or res.erased:
            raise NotFoundError(str(uri))
        key = self._keys.get(res.key_id)
        if key is None:
            raise NotFoundError(str(uri))
        return res, self.decrypt(res, key)

    @staticmethod
    def decrypt(res: Resource, key: bytes) -> bytes:
        nonce, ciphertext = (
            res.payload_ciphertext[:AEAD_NONCE_LEN],
            res.payload_ciphertext[AEAD_NONCE_LEN:],
        )
        aad = codec.canonical_json(
            {"uri": str(res.uri), "version": res.version, "content_type": res.content_type}
        )
        return aead_decrypt(key, nonce, ciphertext, aad)

    def erase_resource(self, uri: ResourceUri, now_ms: int) -> ErasureReceipt:
        """Crypto-shred: destroy every key ever used for this path and mark
        the resource erased. Idempotent. Ledger entries that reference the
        path are untouched."""
        with self._lock:
            res = self._resources.get(uri.path)
            if res is None:
                raise NotFoundError(str(uri))
            destroyed = []
            for key_id in self._key_history.get(uri.path, []):
                if key_id in self._keys:
                    del self._keys[key_id]
                    destroyed.append(key_id)
            if not res.erased:
                self._resources[uri.path] = replace(res, erased=True)
            self._persist_erase(uri, now_ms)
            self._persist_keys()
            return ErasureReceipt(uri, now_ms, tuple(destroyed))

    def live_resources(self) -> list[Resource]:
        return sorted(
            (r for r in self._resources.values() if not r.erased),
            key=lambda r: r.uri.path,
        )

    def container_paths(self) -> list[str]:
        return sorted(p for p in self._containers if p != "/")

    def all_keys(self) -> dict[str, bytes]:
        """Snapshot of the key store (the erasure tests brute-force it)."""
        return dict(self._keys)

    def raw_resource(self, uri: ResourceUri) -> Resource | None:
        """Ciphertext-level view that still sees erased resources."""
        return self._resources.get(uri.path)

    def corrupt_for_test(self, uri: ResourceUri, byte_index: int, bit: int = 0) -> None:
        """Flip one ciphertext bit in place. Test hook for integrity checks."""
        res = self._resources[uri.path]
        blob = bytearray(res.payload_ciphertext)
        blob[byte_index % len(blob)] ^= 1 << (bit % 8)
        self._resources[uri.path] = replace(res, payload_ciphertext=bytes(blob))

    # -- persistence --------------------------------------------------------

    def _persist_container(self, uri: ResourceUri) -> None:
        if self._records_path is None:
            return
        with self._open_records() as fh:
            fh.write(bytes([_REC_CONTAINER]))
            codec.write_str(fh, str(uri))

    def _persist_write(self, res: Resource) -> None:
        if self._records_path is None:
            return
        with self._open_records() as fh:
            fh.write(bytes([_REC_WRITE]))
            codec.write_str(fh, str(res.uri))
            codec.write_u64(fh, res.version)
            codec.write_str(fh, res.content_type)
            codec.write_str(fh, res.key_id)
            codec.write_bytes(fh, res.payload_ciphertext)

    def _persist_erase(self, uri: ResourceUri, now_ms: int) -> None:
        if self._records_path is None:
            return
        with self._open_records() as fh:
            fh.write(bytes([_REC_ERASE]))
            codec.write_str(fh, str(uri))
            codec.write_u64(fh, now_ms)

    def _open_records(self):
        assert self._records_path is not None
        new = not self._records_path.exists()
        fh = open(self._records_path, "ab")
        if new:
            fh.write(_RECORDS_MAGIC)
        return fh

    def _persist_keys(self) -> None:
        """Keys are rewritten atomically: destroyed keys must not survive
        on disk, so this file is the one mutable piece of state."""
        if self._keys_path is None:
            return
        buf = io.BytesIO()
        buf.write(_KEYS_MAGIC)
        for key_id in sorted(self._keys):
            codec.write_str(buf, key_id)
            codec.write_bytes(buf, self._keys[key_id])
        tmp = self._keys_path.with_suffix(".tmp")
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, self._keys_path)

    def _load(self) -> None:
        assert self._records_path is not None and self._keys_path is not None
        with open(self._records_path, "rb") as fh:
            if fh.read(4) != _RECORDS_MAGIC:
                raise ValidationError("bad record file magic")
            while True:
                kind = fh.read(1)
                if not kind:
                    break
                if kind[0] == _REC_CONTAINER:
                    uri = ResourceUri.parse(codec.read_str(fh))
                    self._containers[uri.path] = Container(uri)
                    parent = uri.parent
                    if parent is not None and parent.path in self._containers:
                        self._containers[parent.path].members.add(uri)
                elif kind[0] == _REC_WRITE:
                    uri = ResourceUri.parse(codec.read_str(fh))
                    version = codec.read_u64(fh)
                    content_type = codec.read_str(fh)
                    key_id = codec.read_str(fh)
                    blob = codec.read_bytes(fh)
                    self._resources[uri.path] = Resource(
                        uri, content_type, blob, key_id, version, erased=False
                    )
                    self._key_history.setdefault(uri.path, []).append(key_id)
                    parent = uri.parent
                    if parent is not None and parent.path in self._containers:
                        self._containers[parent.path].members.add(uri)
                elif kind[0] == _REC_ERASE:
                    uri = ResourceUri.parse(codec.read_str(fh))
                    codec.read_u64(fh)
                    res = self._resources.get(uri.path)
                    if res is not None:
                        self._resources[uri.path] = replace(res, erased=True)
                else:
                    raise ValidationError(f"unknown record kind {kind[0]}")
        if self._keys_path.exists():
            with open(self._keys_path, "rb") as fh:
                if fh.read(4) != _KEYS_MAGIC:
                    raise ValidationError("bad key file magic")
                while fh.peek(1):
                    key_id = codec.read_str(fh)
                    self._keys[key_id] = codec.read_bytes(fh)
