#include "qlab/corpus.hpp"

#include <array>
#include <vector>

#include "qlab/error.hpp"
#include "qlab/rng.hpp"

namespace qlab {

namespace {

const std::array<const char*, 48> kNouns = {
    "river",   "mountain", "library", "garden",  "engine",  "lantern", "harbor",  "meadow",
    "bridge",  "orchard",  "market",  "tower",   "valley",  "cottage", "forest",  "island",
    "mill",    "workshop", "archive", "telescope", "compass", "journal", "ledger", "furnace",
    "granary", "windmill",  "quarry",  "canal",   "station", "observatory", "printing press",
    "clock",   "barometer", "kiln",    "loom",    "aqueduct", "lighthouse", "foundry", "cellar",
    "atlas",   "almanac",  "chronicle", "manuscript", "specimen", "apparatus", "reservoir",
    "greenhouse", "signal",
};

const std::array<const char*, 36> kVerbs = {
    "measured",  "described", "repaired",  "surveyed",  "recorded", "collected", "restored",
    "examined",  "sketched",  "catalogued", "observed", "assembled", "calibrated", "documented",
    "charted",   "inspected", "improved",  "rebuilt",   "tested",   "compared",  "traced",
    "numbered",  "labeled",   "polished",  "weighed",   "copied",   "bound",     "sorted",
    "stored",    "shipped",   "unpacked",  "mounted",   "adjusted", "cleaned",   "indexed",
    "archived",
};

const std::array<const char*, 32> kAdjectives = {
    "old",     "narrow",  "quiet",   "copper",  "wooden",  "stone",    "northern", "careful",
    "precise", "weathered", "early",  "late",    "small",   "broad",    "steady",   "bright",
    "faded",   "heavy",   "slender", "curious", "patient", "detailed", "orderly",  "distant",
    "familiar", "sturdy", "gentle",  "obscure", "practical", "reliable", "worn",    "exact",
};

const std::array<const char*, 24> kNames = {
    "amara", "bennet", "carver", "dalia",  "edmund", "farrow", "greta",  "halvard",
    "ines",  "jorin",  "kasia",  "lennart", "mirela", "nolan",  "odette", "peter",
    "quill", "ronan",  "selma",  "tobias", "ulrike", "vasco",  "wren",   "yusuf",
};

const std::array<const char*, 20> kPlaces = {
    "the lower town",  "the east quarter", "the salt flats", "the pine ridge",
    "the old district", "the ferry landing", "the brick yard", "the high street",
    "the mill pond",   "the coal wharf",   "the north gate", "the survey office",
    "the botanical hall", "the tide pools", "the carriage road", "the grain exchange",
    "the copper works", "the paper mill",   "the stone bridge", "the winter market",
};

const std::array<const char*, 12> kConnectives = {
    "afterward",  "by morning",  "later that week", "in the spring", "for many years",
    "before long", "at first light", "once more",   "without delay", "as planned",
    "in the end", "soon after",
};

}  // namespace

std::string generate_corpus(int64_t bytes, uint64_t seed) {
  if (bytes <= 0) throw ContractViolation("generate_corpus: size must be positive");
  Rng rng(mix_seed(seed, 3));
  auto pick = [&](const auto& list) { return list[rng.below(list.size())]; };
  std::string text;
  text.reserve(static_cast<size_t>(bytes) + 256);
  auto sentence = [&]() {
    std::string s;
    switch (rng.below(6)) {
      case 0:
        s = std::string("the ") + pick(kAdjectives) + " " + pick(kNouns) + " near " +
            pick(kPlaces) + " was " + pick(kVerbs) + " by " + pick(kNames) + ".";
        break;
      case 1:
        s = std::string(pick(kNames)) + " " + pick(kVerbs) + " the " + pick(kAdjectives) + " " +
            pick(kNouns) + " and " + pick(kVerbs) + " every " + pick(kNouns) + " in " +
            pick(kPlaces) + ".";
        break;
      case 2:
        s = std::string(pick(kConnectives)) + ", " + pick(kNames) + " " + pick(kVerbs) +
            " a " + pick(kAdjectives) + " " + pick(kNouns) + " for the " + pick(kNouns) + ".";
        break;
      case 3:
        s = std::string("a ") + pick(kAdjectives) + " " + pick(kNouns) + " stood in " +
            pick(kPlaces) + ", " + pick(kVerbs) + " long ago and " + pick(kVerbs) +
            " again.";
        break;
      case 4:
        s = std::string("between the ") + pick(kNouns) + " and the " + pick(kNouns) + ", " +
            pick(kNames) + " " + pick(kVerbs) + " " +
            std::to_string(2 + rng.below(97)) + " " + pick(kNouns) + "s.";
        break;
      default:
        s = std::string("the ") + pick(kNouns) + " of " + pick(kPlaces) + " was " +
            pick(kAdjectives) + ", so " + pick(kNames) + " " + pick(kVerbs) + " it.";
        break;
    }
    s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
  };
  while (static_cast<int64_t>(text.size()) < bytes) {
    uint64_t sentences = 3 + rng.below(5);
    for (uint64_t i = 0; i < sentences; ++i) {
      text += sentence();
      text += (i + 1 < sentences) ? " " : "\n\n";
    }
  }
  text.resize(static_cast<size_t>(bytes));
  return text;
}

}  // namespace qlab
