import numpy as np
import pytest

from rcone.kg import LINK_RELATION, MergedGraph, Mmkg, Modality, SceneGraph
from rcone.query import Anchor, Intersection, Negation, Projection

G_, I_ = Modality.GENERIC, Modality.IMAGE


def toy_story_graph():
    """The Toy Story example: a small MMKG whose poster carries a scene graph.

    Woody wears a yellow shirt and brown boots, Buzz a green suit and white
    shoes; the poster's person nodes are linked to their actors.
    """
    generic = ["ToyStory", "JohnLasseter", "TomHanks", "TimAllen", "WaltDisney"]
    images = ["ToyStoryPoster", "JohnLasseterImage", "WaltDisneyLogo"]
    triples = {
        ("ToyStory", "director", "JohnLasseter"),
        ("ToyStory", "actor", "TomHanks"),
        ("ToyStory", "actor", "TimAllen"),
        ("ToyStory", "producedBy", "WaltDisney"),
        ("ToyStory", "hasImage", "ToyStoryPoster"),
        ("JohnLasseter", "hasImage", "JohnLasseterImage"),
        ("WaltDisney", "hasImage", "WaltDisneyLogo"),
    }
    labels = ["Woody", "Buzz", "WoodyShirt", "WoodyBoots", "BuzzSuit", "BuzzShoes",
              "Yellow", "Green", "Brown", "White", "Shoes", "Shirt"]
    sid = {lab: f"ToyStoryPoster/{lab}#{i}" for i, lab in enumerate(labels)}
    sub = [
        ("Shoes", "hasInstance", "WoodyBoots"), ("Shoes", "hasInstance", "BuzzShoes"),
        ("Shirt", "hasInstance", "WoodyShirt"), ("Shirt", "hasInstance", "BuzzSuit"),
        ("Brown", "colorOf", "WoodyBoots"), ("White", "colorOf", "BuzzShoes"),
        ("WoodyBoots", "wornBy", "Woody"), ("BuzzShoes", "wornBy", "Buzz"),
        ("Woody", "wear", "WoodyShirt"), ("Buzz", "wear", "BuzzSuit"),
        ("WoodyShirt", "hasColor", "Yellow"), ("BuzzSuit", "hasColor", "Green"),
    ]
    sg = SceneGraph("ToyStoryPoster", [(sid[lab], lab) for lab in labels],
                    frozenset((sid[h], r, sid[t]) for h, r, t in sub))
    modality = {e: G_ for e in generic}
    modality.update({e: I_ for e in images})
    relations = ["director", "actor", "producedBy", "hasImage"]
    m = Mmkg(generic + images, relations, frozenset(triples), modality, {"ToyStoryPoster": sg})
    links = {("TomHanks", LINK_RELATION, sid["Woody"]), ("TimAllen", LINK_RELATION, sid["Buzz"])}
    return MergedGraph(m, frozenset(links)), sid


def shirt_color_query(sid):
    """Shirt colour of the actor not wearing brown shoes in Toy Story."""
    actors = Projection(Projection(Anchor("ToyStory"), "actor"), LINK_RELATION)
    shoes = Intersection([Projection(Anchor(sid["Shoes"]), "hasInstance"),
                          Negation(Projection(Anchor(sid["Brown"]), "colorOf"))])
    person = Intersection([actors, Projection(shoes, "wornBy")])
    shirt = Intersection([Projection(person, "wear"), Projection(Anchor(sid["Shirt"]), "hasInstance")])
    return Projection(shirt, "hasColor")


# Twelve nodes: eight generic entities, image P and three sub-entities of P.
HAND_EDGES = {
    "r": {"A": "BC", "B": "E", "C": "E", "D": "G", "F": "H", "H": "P"},
    "s": {"A": "D", "C": "F", "E": "G", "G": "A", "H": "B"},
    "t": {"B": "CF", "D": "H", "E": "P", "G": "H"},
}
X, Y, Z = "P/x#0", "P/y#1", "P/z#2"

# structure -> (anchors, relations, answers), enumerated by hand
HAND_ANSWERS = {
    "1p": ("A", "r", "BC"),
    "2p": ("A", "rt", "CF"),
    "3p": ("A", "rrs", "G"),
    "2i": ("FD", "rt", "H"),
    "3i": ("FDG", "rtt", "H"),
    "pi": ("AF", "str", "H"),
    "ip": ("BC", "rrt", "P"),
    "2u": ("AD", "rt", "BCH"),
    "up": ("AD", "rtr", "EP"),
    "2in": ("AH", "rs", "C"),
    "3in": ("FGA", "rtr", "H"),
    "inp": ("AH", "rss", "F"),
    "pin": ("AG", "rrs", "E"),
    "pni": ("AA", "rtr", "B"),
}


def hand_graph():
    ents = list("ABCDEFGHP")
    triples = {(h, r, t) for r, m in HAND_EDGES.items() for h, ts in m.items() for t in ts}
    modality = {e: G_ for e in ents}
    modality["P"] = I_
    sg = SceneGraph("P", [(X, "x"), (Y, "y"), (Z, "z")], frozenset({(X, "q", Y), (Y, "q", Z)}))
    m = Mmkg(ents, ["r", "s", "t"], frozenset(triples), modality, {"P": sg})
    links = {("G", LINK_RELATION, X), ("H", LINK_RELATION, Y)}
    return MergedGraph(m, frozenset(links))


@pytest.fixture
def toy():
    return toy_story_graph()


@pytest.fixture
def hand():
    return hand_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cone_arrays(rng, n, d):
    ax = rng.uniform(-np.pi, np.pi, (n, d))
    ri = rng.uniform(0, 2 * np.pi, (n, d))
    fu = rng.uniform(0, 1, (n, d)) * (2 * np.pi - ri)
    return ax, ri, fu


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
