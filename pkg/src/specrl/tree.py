"""Dynamic draft-tree construction with layer-wise top-k expansion by
cumulative confidence, candidate reranking, and linearization."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .models import SyntheticLM, TreeStats

ROOT = -1


@dataclass(frozen=True)
class TreeNode:
    token: int
    parent: int          # index into DraftTree.nodes, or ROOT
    confidence: float    # draft probability of this token given its path
    cum_v: float         # product of confidences root -> node
    depth: int
    layer: int


class DraftTree:
    """Immutable speculative candidate tree; the root is the last accepted
    token and is not stored in `nodes`."""

    def __init__(self, root_context, nodes, layers, stats: TreeStats):
        self.root_context = tuple(root_context)
        self.nodes: list[TreeNode] = list(nodes)
        self.layers: list[list[int]] = [list(l) for l in layers]
        self.stats = stats

    def __len__(self):
        return len(self.nodes)

    def path_tokens(self, idx: int) -> list:
        """Tokens along the path root -> node idx (root token excluded)."""
        out = []
        while idx != ROOT:
            node = self.nodes[idx]
            out.append(node.token)
            idx = node.parent
        return out[::-1]

    def children_of(self, idx: int) -> list:
        return [i for i, n in enumerate(self.nodes) if n.parent == idx]

    def to_json_dict(self) -> dict:
        return {
            "root_context": list(self.root_context),
            "nodes": [
                {"token": n.token, "parent": n.parent, "c": n.confidence,
                 "cum_v": n.cum_v, "depth": n.depth}
                for n in self.nodes
            ],
        }

    def to_dot(self) -> str:
        lines = ["digraph drafttree {", '  root [label="root"];']
        for i, n in enumerate(self.nodes):
            lines.append(f'  n{i} [label="t={n.token}\\nV={n.cum_v:.4g}"];')
            src = "root" if n.parent == ROOT else f"n{n.parent}"
            lines.append(f"  {src} -> n{i};")
        lines.append("}")
        return "\n".join(lines)


def build_tree(model: SyntheticLM, context, action,
               eps: float | None = None) -> DraftTree:
    """Layer-wise expansion under the (TT, d, k) limits of `action`.

    Each layer's top-k nodes by cum_v propose their top-k tokens by draft
    probability; the global top-k proposals (by prospective cum_v) form the
    next layer.  Construction stops at depth d or when the non-root node
    count reaches TT (the final layer is truncated to land exactly on TT).
    Ties break by (token id, parent order) for byte-exact determinism.
    """
    if len(context) == 0:
        raise ValueError("context must be non-empty")
    if action.tt > action.k ** (action.d - 1):
        raise ValueError(f"infeasible action {action}")
    tt, d, k = action.tt, action.d, action.k
    if eps is None:
        eps = model.config.draft_noise
    model.target_next_dist(context)   # validates context once
    vocab = model.config.vocab_size

    nodes: list[TreeNode] = []
    layers: list[list[int]] = []
    frontier = [ROOT]                      # node indices of the current layer
    layers_built = 0
    expanded = 0

    for depth in range(1, d + 1):
        if not frontier:
            break
        # top-k of the current layer by cum_v (layer widths are <= k already,
        # but the rule is applied uniformly)
        ranked = sorted(
            frontier,
            key=lambda i: (0.0, 0) if i == ROOT
            else (-nodes[i].cum_v, nodes[i].token),
        )[:k]
        layers_built += 1
        proposals = []   # (neg cum_v, token, parent_order, parent_idx, conf)
        for order, pidx in enumerate(ranked):
            suffix = []
            j = pidx
            while j != ROOT:
                suffix.append(nodes[j].token)
                j = nodes[j].parent
            path = list(context) + suffix[::-1]
            bucket = model.bucket_of(path)
            row = model.row_for_bucket(bucket)
            expanded += 1
            # Candidates are enumerated in the target row's probability order:
            # uniform mixing is monotone in the row for eps < 1, so this is the
            # draft order too, and it keeps zero-probability filler tokens last.
            if eps < 1.0:
                top = model.row_order_for_bucket(bucket)[:k]
            else:
                top = np.arange(min(k, vocab))
            parent_v = 1.0 if pidx == ROOT else nodes[pidx].cum_v
            for t in top:
                c = (1.0 - eps) * float(row[t]) + eps / vocab
                if c <= 0.0:
                    continue
                proposals.append((-(parent_v * c), int(t), order, pidx, c))
        if not proposals:
            break
        proposals.sort()
        chosen = proposals[:k]
        room = tt - len(nodes)
        if room < len(chosen):
            chosen = chosen[:room]
        layer_idx = []
        for neg_v, token, _order, pidx, c in chosen:
            nodes.append(TreeNode(token=token, parent=pidx, confidence=c,
                                  cum_v=-neg_v, depth=depth, layer=depth))
            layer_idx.append(len(nodes) - 1)
        layers.append(layer_idx)
        if len(nodes) >= tt:
            break
        frontier = layer_idx

    stats = TreeStats(layers_built=layers_built, nodes_expanded=expanded,
                      total_nodes=len(nodes), candidates_verified=0)
    return DraftTree(context, nodes, layers, stats)


def rerank(tree: DraftTree, budget: int) -> list:
    """Top `budget` non-root node indices by cum_v descending.

    Ties break by (shallower depth, lower token id, array order).  Because
    cum_v is non-increasing along every path, any sorted prefix is already
    ancestor-closed; this is asserted rather than repaired.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    order = sorted(
        range(len(tree.nodes)),
        key=lambda i: (-tree.nodes[i].cum_v, tree.nodes[i].depth,
                       tree.nodes[i].token, i),
    )[:budget]
    kept = set(order)
    for i in order:
        p = tree.nodes[i].parent
        assert p == ROOT or p in kept, "rerank prefix not ancestor-closed"
    return order


def linearize(tree: DraftTree):
    """Topological flattening: (token list, parent-index list), parents first."""
    tokens = [n.token for n in tree.nodes]
    parents = [n.parent for n in tree.nodes]
    for i, p in enumerate(parents):
        assert p < i, "nodes are not in topological order"
    return tokens, parents


def tree_from_linearization(root_context, tokens, parents,
                            confidences) -> DraftTree:
    """Rebuild a DraftTree from linearize() output plus per-node confidences."""
    nodes = []
    layers: dict[int, list] = {}
    for i, (t, p, c) in enumerate(zip(tokens, parents, confidences)):
        depth = 1 if p == ROOT else nodes[p].depth + 1
        v = c if p == ROOT else nodes[p].cum_v * c
        nodes.append(TreeNode(token=t, parent=p, confidence=c, cum_v=v,
                              depth=depth, layer=depth))
        layers.setdefault(depth, []).append(i)
    layer_list = [layers[d] for d in sorted(layers)]
    stats = TreeStats(layers_built=len(layer_list), nodes_expanded=0,
                      total_nodes=len(nodes), candidates_verified=0)
    return DraftTree(root_context, nodes, layer_list, stats)


def tree_to_json(tree: DraftTree) -> str:
    return json.dumps(tree.to_json_dict(), indent=2, sort_keys=True)
