#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "deid/corpus.hpp"
#include "deid/util.hpp"

namespace deid::corpus {

namespace {

std::vector<std::string> number_range(int from, int to, int width = 0) {
  std::vector<std::string> out;
  for (int i = from; i <= to; ++i) {
    std::string s = std::to_string(i);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    out.push_back(std::move(s));
  }
  return out;
}

// Token groups double as embedding clusters (cluster/sub ids drive the toy
// vector geometry). PHI-bearing groups are sized so that a token's top-50
// cosine neighborhood stays inside its own sub-group.
std::vector<VocabGroup> build_vocab_groups() {
  std::vector<VocabGroup> g;

  g.push_back({"first_names", 0, 0, {
      "James", "Oliver", "Amelia", "Lucas", "Sophia", "Ethan", "Isabella", "Mira",
      "Logan", "Harper", "Jacob", "Evelyn", "Noah", "Abigail", "Liam", "Emily",
      "Ella", "Avery", "Wyatt", "Grace", "Julian", "Chloe", "Levi", "Victoria",
      "Aaron", "Riley", "Eli", "Aria", "Owen", "Lily", "Caleb", "Hannah",
      "Ryan", "Layla", "Nathan", "Zoe", "Isaac", "Nora", "Adam", "Hazel",
      "Thomas", "Violet", "Samuel", "Maya", "David", "Stella", "Joseph", "Audrey",
      "Daniel", "Gabriel", "Lucy", "Simon", "Clara", "Felix", "Iris", "Henry"}});

  g.push_back({"surnames", 1, 0, {
      "Khan", "Alvarez", "Brennan", "Castillo", "Delgado", "Eriksen", "Fontaine",
      "Galloway", "Hawkins", "Ibarra", "Jimenez", "Kowalski", "Lindqvist", "Moreau",
      "Novak", "Okafor", "Petrov", "Quintana", "Rosales", "Santoro", "Tanaka",
      "Ulrich", "Vance", "Whitfield", "Xiong", "Yamada", "Zielinski", "Acosta",
      "Barlow", "Crowley", "Donahue", "Escobar", "Farrell", "Gustafson", "Holloway",
      "Inoue", "Jansen", "Keller", "Lombardi", "Mendoza", "Nakamura", "Connolly",
      "Pruitt", "Quigley", "Renner", "Schafer", "Thornton", "Ueda", "Villanueva",
      "Wexler", "Yoshida", "Zamora", "Ashford", "Bateman", "Dempsey", "Ferraro"}});

  // clinical score/criteria eponyms: same surface shape and embedding
  // neighborhood as surnames, but never PHI
  g.push_back({"eponyms", 1, 1, {
      "Glasgow", "Apgar", "Braden", "Wells", "Morse", "Norton", "Barthel",
      "Waterlow", "Aldrete", "Ramsay", "Alvarado", "Centor", "Killip", "Ranson",
      "Rockall", "Mallampati", "Bishop", "Borg", "Karnofsky", "Lachman"}});

  g.push_back({"hospital_words", 2, 0, {
      "Mercy", "Riverside", "Lakeside", "Hillcrest", "Parkview", "Brookdale",
      "Fairview", "Northgate", "Southport", "Eastwood", "Westbrook", "Maplewood",
      "Cedarcrest", "Pinehurst", "Oakdale", "Elmhurst", "Ashgrove", "Birchwood",
      "Willowbrook", "Stonebridge", "Clearwater", "Silverlake", "Harborview",
      "Bayshore", "Seacrest", "Summitview", "Valleyview", "Meadowbrook", "Foxridge",
      "Deerfield", "Lakewood", "Ridgecrest", "Crestwood", "Glenview", "Greenfield",
      "Highland", "Kingsway", "Lanchester", "Marlowe", "Newhaven", "Ortega",
      "Pembroke", "Quarry", "Redwood", "Sagebrook", "Tremont", "Underhill",
      "Vistamar", "Wavecrest", "Yorkdale", "Zephyrhill", "Ambrose", "Bellmont",
      "Covington", "Dunmore", "Exeter"}});

  // months, day numbers and years share one undifferentiated cluster: any
  // date part may move to any other under neighbor replacement without
  // changing what the tagger needs (all are DATE)
  g.push_back({"months", 3, 0, {
      "January", "February", "March", "April", "May", "June", "July", "August",
      "September", "October", "November", "December"}});
  g.push_back({"month_days", 3, 0, number_range(1, 28)});
  g.push_back({"years", 3, 0, number_range(1990, 2021)});

  g.push_back({"ages", 4, 0, number_range(40, 95)});

  g.push_back({"phone_areas", 5, 0, number_range(701, 756)});
  g.push_back({"phone_suffixes", 6, 0, number_range(100, 155, 4)});

  g.push_back({"record_numbers", 7, 0, number_range(400100, 400155)});

  g.push_back({"cities", 8, 0, {
      "Boston", "Denver", "Austin", "Portland", "Tucson", "Fresno", "Omaha",
      "Raleigh", "Memphis", "Tulsa", "Wichita", "Spokane", "Tacoma", "Modesto",
      "Durham", "Lubbock", "Laredo", "Chandler", "Norfolk", "Madison", "Lincoln",
      "Greensboro", "Plano", "Henderson", "Toledo", "Chesapeake", "Irving",
      "Fremont", "Garland", "Hialeah", "Scottsdale", "Fontana", "Columbus",
      "Shreveport", "Akron", "Knoxville", "Worcester", "Provo", "Salem", "Eugene",
      "Anchorage", "Boise", "Reno", "Tampa", "Orlando", "Dayton", "Peoria",
      "Rockford", "Joliet", "Naperville", "Elgin", "Waukegan", "Cicero", "Berwyn",
      "Evanston", "Skokie"}});

  g.push_back({"states", 9, 0, {
      "Alabama", "Alaska", "Arizona", "Arkansas", "California", "Colorado",
      "Connecticut", "Delaware", "Florida", "Georgia", "Hawaii", "Idaho",
      "Illinois", "Indiana", "Iowa", "Kansas", "Kentucky", "Louisiana", "Maine",
      "Maryland", "Massachusetts", "Michigan", "Minnesota", "Mississippi",
      "Missouri", "Montana", "Nebraska", "Nevada", "Ohio", "Oklahoma", "Oregon",
      "Pennsylvania", "Tennessee", "Texas", "Utah", "Vermont", "Virginia",
      "Washington", "Wisconsin", "Wyoming", "Ontario", "Quebec", "Alberta",
      "Manitoba", "Saskatchewan", "Yukon", "Nunavut", "Queensland", "Tasmania",
      "Bavaria", "Saxony", "Hesse", "Brandenburg", "Thuringia", "Sonora",
      "Jalisco"}});
  g.push_back({"countries", 18, 0, {
      "Canada", "Mexico", "Brazil", "France", "Germany", "Spain", "Italy",
      "Poland", "Norway", "Sweden", "Finland", "Japan", "China", "India", "Egypt",
      "Kenya", "Chile", "Peru", "Greece", "Portugal", "Ireland", "Austria",
      "Belgium", "Denmark", "Hungary", "Croatia", "Argentina", "Bolivia",
      "Colombia", "Ecuador", "Uruguay", "Paraguay", "Venezuela", "Iceland",
      "Netherlands", "Switzerland", "Slovakia", "Slovenia", "Romania", "Bulgaria",
      "Serbia", "Albania", "Estonia", "Latvia", "Lithuania", "Ukraine", "Turkey",
      "Morocco", "Tunisia", "Algeria", "Nigeria", "Ghana", "Ethiopia", "Tanzania",
      "Uganda", "Zambia"}});

  g.push_back({"professions", 10, 0, {
      "teacher", "farmer", "welder", "machinist", "carpenter", "electrician",
      "plumber", "accountant", "lawyer", "banker", "chef", "baker", "tailor",
      "barber", "florist", "librarian", "janitor", "cashier", "clerk", "painter",
      "mechanic", "pilot", "sailor", "fisherman", "rancher", "miner", "surveyor",
      "architect", "musician", "actor", "blacksmith", "locksmith", "jeweler",
      "optician", "typist", "weaver", "potter", "glazier", "roofer", "cooper",
      "brewer", "butcher", "grocer", "vintner", "cobbler", "saddler", "tinsmith",
      "wheelwright", "draper", "mercer", "porter", "shepherd", "courier",
      "printer", "binder", "engraver"}});

  g.push_back({"misc_codes", 11, 0, {
      "zx4821", "qr7733", "kp2096", "vn8450", "tb6612", "wd1187", "mh9302",
      "js5541", "cf7208", "lg3385", "ry6029", "pk8814", "dn4476", "bw9153",
      "xu2267", "ae7940", "os3518", "ft6681", "gm1059", "hz8823", "qv5107",
      "nb7264", "ls9480", "tm2741", "rk6358", "wp1925", "cd8092", "fh3617",
      "jx7549", "mv2183", "pz6870", "sb4296", "uw9031", "yd5764", "ag1408",
      "ck7652", "en3289", "gr9816", "il5443", "kt2077", "mx8630", "oz4195",
      "qb6958", "sd1372", "uf7804", "wh3541", "yj9267", "an5690", "cp2134",
      "eq8457", "gt4980", "iw6723", "ky1346", "na7589", "pc3902", "rf8265"}});

  g.push_back({"vital_values", 12, 0, number_range(100, 155)});

  g.push_back({"verbs", 13, 0, {
      "was", "admitted", "seen", "transferred", "discharged", "reviewed",
      "denies", "reports", "presents", "completed", "scheduled", "continues",
      "improved", "tolerated", "ambulating", "resting", "started", "stopped",
      "increased", "decreased", "noted", "observed", "monitored", "evaluated",
      "examined", "assessed", "stable", "alert", "oriented", "afebrile",
      "resolved", "persists", "worsened", "follows", "responds", "recovers"}});

  g.push_back({"nouns", 14, 0, {
      "patient", "pain", "fever", "cough", "headache", "nausea", "history",
      "exam", "labs", "unit", "ward", "clinic", "followup", "morning", "evening",
      "visit", "male", "female", "years", "old", "medication", "dosage", "diet",
      "fluids", "vitals", "pressure", "glucose", "oxygen", "discharge",
      "admission", "symptoms", "therapy", "treatment", "recovery", "progress",
      "appetite", "sleep", "mobility", "wound", "dressing"}});

  g.push_back({"function_words", 15, 0, {
      "the", "to", "on", "of", "in", "by", "a", "for", "with", "since", "at",
      "is", "and", "no", "as", "per", "after", "before", "during", "over",
      "under", "from", "this", "that", "today", "well", "yo", "file", "chart",
      "care", "number", "acute", "distress", "further", "last", "daily"}});

  g.push_back({"sentence_heads", 16, 0, {
      "Patient", "The", "Seen", "Review", "Transferred", "Admitted", "BP", "MRN",
      "Dr", "Works", "Resident", "History", "Follow", "Consult", "Age", "Contact",
      "Badge", "Appointment", "Lives", "Traveled", "Scale", "Plan", "Continue",
      "Allergies", "No", "Labs", "Exam", "Assessment", "Family", "Vitals",
      "Wound", "Diet", "Mobility", "Discharge", "Progress", "Note"}});

  g.push_back({"punctuation", 17, 0, {".", ",", "-", "(", ")", "/", ":"}});

  return g;
}

// --- templates ---------------------------------------------------------------

// A template is a list of parts. A literal part is emitted verbatim; a slot
// part draws one token from each named group (joined by spaces) and, when
// PHI, records a single span over the whole draw.
struct Part {
  std::string literal;
  std::vector<std::string> groups;
  PhiCategory category = PhiCategory::OTHER;
  bool is_phi = false;
};

struct SentenceTemplate {
  std::vector<Part> parts;
  bool has_phi = false;
};

Part lit(std::string s) { return {std::move(s), {}, PhiCategory::OTHER, false}; }
Part phi(PhiCategory c, std::vector<std::string> groups) {
  return {"", std::move(groups), c, true};
}
Part plain(std::vector<std::string> groups) {
  return {"", std::move(groups), PhiCategory::OTHER, false};
}

std::vector<SentenceTemplate> build_templates() {
  using C = PhiCategory;
  std::vector<SentenceTemplate> t;
  auto add = [&t](std::vector<Part> parts) {
    SentenceTemplate st;
    st.parts = std::move(parts);
    for (const Part& p : st.parts) st.has_phi |= p.is_phi;
    t.push_back(std::move(st));
  };

  // PHI-bearing sentences
  add({lit("Patient "), phi(C::PATIENT, {"first_names"}), lit(" was admitted to "),
       phi(C::HOSPITAL, {"hospital_words", "hospital_words"}), lit(" on "),
       phi(C::DATE, {"months", "month_days"}), lit(".")});
  add({lit("Seen by Dr. "), phi(C::DOCTOR, {"surnames"}), lit(" in the "),
       plain({"nouns"}), lit(" unit.")});
  add({lit("Review by "), phi(C::DOCTOR, {"surnames"}), lit(" completed today.")});
  add({lit("Assessment by "), phi(C::DOCTOR, {"surnames"}), lit(" documented this morning.")});
  add({lit("Patient is "), phi(C::AGE, {"ages"}), lit("yo "), plain({"nouns"}), lit(".")});
  add({lit("Contact number "), phi(C::PHONE, {"phone_areas"}), lit("-"),
       phi(C::PHONE, {"phone_suffixes"}), lit(" on file.")});
  add({lit("MRN "), phi(C::ID, {"record_numbers"}), lit(" reviewed before discharge.")});
  add({lit("Resident of "), phi(C::CITY, {"cities"}), lit(" since "),
       phi(C::DATE, {"years"}), lit(".")});
  add({lit("Family lives in "), phi(C::STATE, {"states"}), lit(".")});
  add({lit("Traveled from "), phi(C::COUNTRY, {"countries"}), lit(" last "),
       phi(C::DATE, {"months"}), lit(".")});
  add({lit("Works as a "), phi(C::PROFESSION, {"professions"}), lit(".")});
  add({lit("Badge "), phi(C::OTHER, {"misc_codes"}), lit(" noted on chart.")});
  add({lit("Transferred to "), phi(C::HOSPITAL, {"hospital_words"}),
       lit(" for further care.")});
  add({lit("Follow up with Dr. "), phi(C::DOCTOR, {"surnames"}), lit(" on "),
       phi(C::DATE, {"months", "month_days"}), lit(".")});
  add({phi(C::PATIENT, {"first_names"}), lit(" tolerated the "), plain({"nouns"}),
       lit(" well.")});
  add({lit("Appointment on "), phi(C::DATE, {"months", "month_days", "years"}),
       lit(" at the clinic.")});

  // PHI-free sentences; the first two share their surface with the
  // "Review by"/"Assessment by" templates above, differing only in the
  // surname-shaped token drawn
  add({lit("Review by "), plain({"eponyms"}), lit(" completed today.")});
  add({lit("Assessment by "), plain({"eponyms"}), lit(" documented this morning.")});
  add({lit("BP "), plain({"vital_values"}), lit(" over "), plain({"vital_values"}),
       lit(" this morning.")});
  add({lit("Patient denies "), plain({"nouns"}), lit(" and "), plain({"nouns"}), lit(".")});
  add({lit("Patient remains "), plain({"verbs"}), lit(" and "), plain({"verbs"}), lit(".")});
  add({lit("Continue "), plain({"nouns"}), lit(" and monitor "), plain({"nouns"}), lit(".")});
  add({lit("No acute distress noted on "), plain({"nouns"}), lit(".")});
  add({lit("Plan discussed with the patient.")});
  add({lit("Labs reviewed and "), plain({"verbs"}), lit(".")});

  return t;
}

const std::vector<VocabGroup>& groups_singleton() {
  static const std::vector<VocabGroup> g = build_vocab_groups();
  return g;
}

const std::vector<SentenceTemplate>& templates_singleton() {
  static const std::vector<SentenceTemplate> t = build_templates();
  return t;
}

const VocabGroup& group_by_name(const std::string& name) {
  for (const VocabGroup& g : groups_singleton())
    if (g.name == name) return g;
  throw std::logic_error("unknown vocab group: " + name);
}

// expected (phi tokens, total tokens) per template, for the density solver
std::pair<double, double> expected_counts(const SentenceTemplate& t) {
  double phi_tokens = 0, total = 0;
  for (const Part& p : t.parts) {
    if (p.groups.empty()) {
      total += static_cast<double>(tokenize(p.literal).size());
    } else {
      const double k = static_cast<double>(p.groups.size());
      total += k;
      if (p.is_phi) phi_tokens += k;
    }
  }
  return {phi_tokens, total};
}

struct RenderedSentence {
  std::string text;
  std::vector<PhiSpan> spans;  // offsets local to the sentence
};

RenderedSentence render_template(const SentenceTemplate& t, Rng& rng) {
  RenderedSentence out;
  for (const Part& p : t.parts) {
    if (p.groups.empty()) {
      out.text += p.literal;
      continue;
    }
    const size_t start = out.text.size();  // generator text is ASCII
    for (size_t i = 0; i < p.groups.size(); ++i) {
      if (i > 0) out.text += ' ';
      const VocabGroup& g = group_by_name(p.groups[i]);
      out.text += g.tokens[rng.below(g.tokens.size())];
    }
    if (p.is_phi) {
      out.spans.push_back(
          {start, out.text.size(), p.category, out.text.substr(start, out.text.size() - start)});
    }
  }
  return out;
}

}  // namespace

const std::vector<VocabGroup>& synthetic_vocab_groups() { return groups_singleton(); }

std::vector<std::string> synthetic_vocabulary() {
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  for (const VocabGroup& g : groups_singleton()) {
    for (const std::string& tok : g.tokens) {
      if (seen.insert(tok).second) vocab.push_back(tok);
    }
  }
  return vocab;
}

std::vector<Document> generate_synthetic(uint64_t seed, size_t n_docs, double phi_density) {
  if (n_docs < 1) throw std::invalid_argument("generate_synthetic: n_docs must be >= 1");
  if (!(phi_density > 0.0) || phi_density > 1.0) {
    throw std::invalid_argument("generate_synthetic: phi_density must be in (0, 1]");
  }

  const auto& templates = templates_singleton();
  std::vector<size_t> phi_templates, filler_templates;
  double phi_pool_phi = 0, phi_pool_total = 0, filler_pool_total = 0;
  for (size_t i = 0; i < templates.size(); ++i) {
    auto [p, n] = expected_counts(templates[i]);
    if (templates[i].has_phi) {
      phi_templates.push_back(i);
      phi_pool_phi += p;
      phi_pool_total += n;
    } else {
      filler_templates.push_back(i);
      filler_pool_total += n;
    }
  }
  phi_pool_phi /= static_cast<double>(phi_templates.size());
  phi_pool_total /= static_cast<double>(phi_templates.size());
  filler_pool_total /= static_cast<double>(filler_templates.size());

  // fraction of sentences drawn from the PHI pool so that the expected
  // PHI-token fraction matches the requested density
  auto density_at = [&](double p) {
    return p * phi_pool_phi / (p * phi_pool_total + (1.0 - p) * filler_pool_total);
  };
  if (phi_density > density_at(1.0)) {
    throw std::invalid_argument(
        cat("generate_synthetic: phi_density ", phi_density, " exceeds the template maximum ",
            density_at(1.0)));
  }
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (density_at(mid) < phi_density ? lo : hi) = mid;
  }
  const double p_phi = 0.5 * (lo + hi);

  std::vector<Document> docs;
  docs.reserve(n_docs);
  for (size_t d = 0; d < n_docs; ++d) {
    Rng rng(derive_seed(seed, 0x5e17d0c5ULL, d));
    Document doc;
    doc.id = cat("synth-", seed, "-", d);

    const size_t n_sentences = 4 + rng.below(5);
    bool any_phi = false;
    const size_t forced_phi = rng.below(n_sentences);
    for (size_t s = 0; s < n_sentences; ++s) {
      bool from_phi_pool = rng.uniform() < p_phi;
      if (s == n_sentences - 1 && !any_phi) from_phi_pool = true;
      if (s == forced_phi) from_phi_pool = true;
      const auto& pool = from_phi_pool ? phi_templates : filler_templates;
      const SentenceTemplate& tpl = templates[pool[rng.below(pool.size())]];
      any_phi |= tpl.has_phi;

      std::string prefix;
      if (s > 0) {
        prefix = "\n";
        if (rng.uniform() < 0.15) prefix = "\n\n";
        if (rng.uniform() < 0.10) prefix += "- ";
      }
      RenderedSentence sent = render_template(tpl, rng);
      const size_t base = doc.text.size() + prefix.size();
      doc.text += prefix + sent.text;
      for (PhiSpan sp : sent.spans) {
        sp.start += base;
        sp.end += base;
        doc.spans.push_back(std::move(sp));
      }
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace deid::corpus
