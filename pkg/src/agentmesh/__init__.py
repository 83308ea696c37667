"""agentmesh: a self-contained federated agent-registry substrate.

Modules:
  identity    deterministic Ed25519 keys, did:nanda identifiers, attestations
  cards       semantic agent cards with canonical encoding and digests
  registry    Merkle radix index with inclusion proofs
  federation  LWW-map CRDT replicas and push-pull gossip
  trust       local scores, damped propagation, signal fusion, tiers
  discovery   hashing embedder, pairwise ranker, dedup
  micropay    invoices, payment headers, conservation-checked ledger
  privacy     Laplace mechanism and budget accounting
  simnet      deterministic scenario harness
  cli         operator entry point (`agentmesh`)
"""

__version__ = "0.1.0"
