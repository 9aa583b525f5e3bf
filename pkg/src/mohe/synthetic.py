"""Seeded synthetic catalogs, sessions and taxonomies for tests and demos."""

from __future__ import annotations

import string

import numpy as np

from .records import ItemRecord, SessionEvent, SessionRecord


def _words(rng: np.random.Generator, n: int, lo: int = 4, hi: int = 8, avoid=()) -> list[str]:
    letters = np.array(list(string.ascii_lowercase))
    out, seen = [], set(avoid)
    while len(out) < n:
        w = "".join(rng.choice(letters, size=rng.integers(lo, hi + 1)))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def keyword_catalog(n_items: int = 2000, n_classes: int = 10, seed: int = 0, keyword_rate: float = 1.0,
                    keywords_per_class: int = 3, filler_vocab: int = 300, title_words: tuple[int, int] = (5, 10),
                    with_shop: bool = False, shops_per_class: int = 1) -> list[ItemRecord]:
    """Titles of random filler words with a class keyword planted in them.

    With ``keyword_rate`` < 1 some titles carry no keyword at all and are
    unclassifiable from the title alone. ``with_shop`` attaches a shop id
    drawn from shops that sell only that item's class.
    """
    rng = np.random.default_rng(seed)
    keywords = [_words(rng, keywords_per_class, 5, 9) for _ in range(n_classes)]
    flat = {w for ks in keywords for w in ks}
    filler = _words(rng, filler_vocab, 3, 8, avoid=flat)
    items = []
    for i in range(n_items):
        c = int(rng.integers(n_classes))
        words = list(rng.choice(filler, size=rng.integers(title_words[0], title_words[1] + 1)))
        if rng.random() < keyword_rate:
            words.insert(int(rng.integers(len(words) + 1)), keywords[c][rng.integers(keywords_per_class)])
        shop = f"s{c}_{rng.integers(shops_per_class)}" if with_shop else None
        items.append(ItemRecord(f"item{i:05d}", " ".join(words), (f"genre{c:02d}",), shop_id=shop))
    return items


def inject_label_noise(items: list[ItemRecord], rate: float, seed: int = 0) -> list[ItemRecord]:
    """Move a ``rate`` fraction of items to a uniformly chosen *different* label."""
    rng = np.random.default_rng(seed)
    paths = sorted({it.genre_path for it in items})
    n_noisy = int(round(rate * len(items)))
    noisy = set(rng.choice(len(items), size=n_noisy, replace=False).tolist())
    out = []
    for i, it in enumerate(items):
        if i in noisy:
            others = [p for p in paths if p != it.genre_path]
            it = ItemRecord(**{**vars(it), "genre_path": others[rng.integers(len(others))]})
        out.append(it)
    return out


def split(items: list, test_fraction: float = 0.2, seed: int = 0) -> tuple[list, list]:
    order = np.random.default_rng(seed).permutation(len(items))
    n_test = int(round(test_fraction * len(items)))
    test = set(order[:n_test].tolist())
    return [it for i, it in enumerate(items) if i not in test], [it for i, it in enumerate(items) if i in test]


def taxonomy_items(depth: int = 5, branching: int = 3, n_items: int = 3000, seed: int = 0,
                   purchase_rate: float = 0.3, cart_rate: float = 0.1) -> list[ItemRecord]:
    """Items on the leaves of a random-width tree with skewed leaf popularity."""
    rng = np.random.default_rng(seed)
    leaves = [()]
    for level in range(1, depth + 1):
        nxt = []
        for node in leaves:
            width = int(rng.integers(2, branching + 1))
            nxt.extend(node + (f"n{level}_{len(nxt) + j}",) for j in range(width))
        leaves = nxt
    weights = rng.dirichlet(np.full(len(leaves), 0.7))
    items = []
    for i in range(n_items):
        path = leaves[rng.choice(len(leaves), p=weights)]
        u = rng.random()
        items.append(ItemRecord(f"t{i:05d}", f"item {i}", path,
                                purchased=bool(u < purchase_rate),
                                added_to_cart=bool(purchase_rate <= u < purchase_rate + cart_rate)))
    return items


def eup_fixture():
    """Six hand-built sessions over five items.

    Returns ``(sessions, catalog_labels, provided_labels)``. At level 1 the
    qualifying purchases give provided genre A three pairs with catalog
    labels A, A, B (EuP(A) = 2/3) and provided genre B one agreeing pair
    (EuP(B) = 1). The other sessions sit just outside a threshold: a
    four-character query and an overlap of exactly 0.9.
    """
    provided = {
        "i1": ("Shoes", "Red Sneakers"),
        "i2": ("Shoes", "Red Sneakers"),
        "i3": ("Shoes", "Red Sneakers"),
        "i4": ("Bags", "Leather Totes"),
        "i5": ("Shoes", "Red Sneakers"),
    }
    catalog = {
        "i1": ("Shoes", "Red Sneakers"),
        "i2": ("Shoes", "Red Sneakers"),
        "i3": ("Bags", "Leather Totes"),
        "i4": ("Bags", "Leather Totes"),
        "i5": ("Bags", "Leather Totes"),
    }

    def session(sid, *events):
        return SessionRecord(sid, f"u{sid}", [SessionEvent(float(t), *e) for t, e in enumerate(events)])

    sessions = [
        session("s1", ("search", "red shoe"), ("click", None, "i1"), ("purchase", None, "i1")),
        session("s2", ("search", "sneakers"), ("purchase", None, "i2")),
        session("s3", ("search", "red sneaker shoes"), ("add_to_cart", None, "i3"), ("purchase", None, "i3")),
        session("s4", ("search", "leather tote"), ("purchase", None, "i4")),
        # 4 non-whitespace characters: below the length threshold
        session("s5", ("search", "sh o e"), ("purchase", None, "i5")),
        # 10 distinct characters, 9 of them in the path names: overlap exactly 0.9
        session("s6", ("search", "sneaker dohx"), ("purchase", None, "i5")),
    ]
    return sessions, catalog, provided
