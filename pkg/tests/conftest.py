import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest  # noqa: E402
from hypothesis import settings  # noqa: E402

from tagnet.datagen import GenConfig, generate_corpus  # noqa: E402
from tagnet.netlist import parse_netlist  # noqa: E402
from tagnet.textembed import TextConfig, corpus_sentences, train_word_embeddings  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# Two-level OTA in the style of a textbook figure: a symmetric input pair, a
# mirror load, a tail device, a dummy, a passive, and a sub-circuit instance.
OTA_NETLIST = """\
.GLOBAL vdd vss
.SUBCKT ota inp inn out bias
M0 tail bias vss vss nch_lvt_mac L=20 NF=2 NFIN=4
M1A outa inp tail vss nch_lvt_mac L=20 NF=4 NFIN=4
M1B out inn tail vss nch_lvt_mac L=20 NF=4 NFIN=4
M2A outa outa vdd vdd pch_lvt_mac L=30 NF=2 NFIN=4
M2B out outa vdd vdd pch_lvt_mac L=30 NF=2 NFIN=4
MDUMMY0 vss vss vss vss nch_lvt_mac L=20 NF=1 NFIN=4
C0 out vss cfmom_2t M=6
.ENDS
.SUBCKT top in1 in2 out
XOTA in1 in2 mid vb ota
R0 mid out rupolym_m L=400 W=40
MB vb vb vss vss nch_ulvt_mac L=40 NF=1 NFIN=2
.ENDS
.TOP top
"""


@pytest.fixture(scope="session")
def ota_design():
    return parse_netlist(OTA_NETLIST, name="ota_demo")


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(GenConfig(seed=3, n_designs=10))


@pytest.fixture(scope="session")
def small_words(small_corpus):
    cfg = TextConfig(buckets=2 ** 12, epochs=2)
    return train_word_embeddings(corpus_sentences([d for d, _, _ in small_corpus]), cfg, seed=0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(results):
        title, passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
