#include "fewtrans/bundled.hpp"

#include <algorithm>
#include <cctype>

#include "fewtrans/rng.hpp"

namespace fewtrans {

namespace {

std::string sanitize_id(const std::string& display) {
    std::string id;
    bool pending_sep = false;
    for (char raw : display) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ||
                  c == '/' || c == '+';
        if (ok) {
            if (pending_sep && !id.empty()) id.push_back('_');
            pending_sep = false;
            id.push_back(c);
        } else {
            pending_sep = true;
        }
    }
    return id;
}

std::string pad(int value, int width) {
    std::string s = std::to_string(value);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

BundledDataset make_named(const std::string& name, const std::vector<std::string>& displays,
                          std::size_t base_count, const std::string& notes) {
    BundledDataset out;
    out.manifest.name = name;
    out.manifest.item_source.kind = ItemSourceKind::EmbeddingFile;
    out.manifest.notes = notes;
    for (const auto& d : displays) out.manifest.classes.push_back({sanitize_id(d), d, {}});

    const std::size_t n = displays.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    TaskRng rng(0x5eedULL, mix64(std::hash<std::string>{}(name)), RngPurpose::kSplit);
    rng.shuffle(order);
    std::vector<bool> is_base(n, false);
    for (std::size_t i = 0; i < base_count; ++i) is_base[order[i]] = true;
    for (std::size_t i = 0; i < n; ++i)
        (is_base[i] ? out.split.base : out.split.novel).push_back(out.manifest.classes[i].id);
    return out;
}

BundledDataset make_positional(const std::string& name, const std::string& id_prefix,
                               const std::string& display_prefix, int count,
                               std::size_t base_count, const std::string& notes) {
    std::vector<std::string> displays;
    displays.reserve(count);
    const int width = static_cast<int>(std::to_string(count - 1).size());
    BundledDataset out;
    out.manifest.name = name;
    out.manifest.item_source.kind = ItemSourceKind::EmbeddingFile;
    out.manifest.notes = notes;
    for (int i = 0; i < count; ++i)
        out.manifest.classes.push_back(
            {id_prefix + pad(i, width), display_prefix + " " + std::to_string(i), {}});

    std::vector<std::size_t> order(count);
    for (int i = 0; i < count; ++i) order[i] = static_cast<std::size_t>(i);
    TaskRng rng(0x5eedULL, mix64(std::hash<std::string>{}(name)), RngPurpose::kSplit);
    rng.shuffle(order);
    std::vector<bool> is_base(count, false);
    for (std::size_t i = 0; i < base_count; ++i) is_base[order[i]] = true;
    for (int i = 0; i < count; ++i)
        (is_base[i] ? out.split.base : out.split.novel).push_back(out.manifest.classes[i].id);
    return out;
}

const std::vector<std::string>& eurosat_names() {
    static const std::vector<std::string> v = {
        "annual crop", "forest",         "herbaceous vegetation", "highway", "industrial",
        "pasture",     "permanent crop", "residential",           "river",   "sea lake"};
    return v;
}

const std::vector<std::string>& dtd_names() {
    static const std::vector<std::string> v = {
        "banded",       "blotchy",   "braided",      "bubbly",     "bumpy",     "chequered",
        "cobwebbed",    "cracked",   "crosshatched", "crystalline", "dotted",   "fibrous",
        "flecked",      "freckled",  "frilly",       "gauzy",      "grid",      "grooved",
        "honeycombed",  "interlaced", "knitted",     "lacelike",   "lined",     "marbled",
        "matted",       "meshed",    "paisley",      "perforated", "pitted",    "pleated",
        "polka-dotted", "porous",    "potholed",     "scaly",      "smeared",   "spiralled",
        "sprinkled",    "stained",   "stratified",   "striped",    "studded",   "swirly",
        "veined",       "waffled",   "woven",        "wrinkled",   "zigzagged"};
    return v;
}

const std::vector<std::string>& cifar100_names() {
    static const std::vector<std::string> v = {
        "apple",       "aquarium fish", "baby",        "bear",        "beaver",
        "bed",         "bee",           "beetle",      "bicycle",     "bottle",
        "bowl",        "boy",           "bridge",      "bus",         "butterfly",
        "camel",       "can",           "castle",      "caterpillar", "cattle",
        "chair",       "chimpanzee",    "clock",       "cloud",       "cockroach",
        "couch",       "crab",          "crocodile",   "cup",         "dinosaur",
        "dolphin",     "elephant",      "flatfish",    "forest",      "fox",
        "girl",        "hamster",       "house",       "kangaroo",    "keyboard",
        "lamp",        "lawn mower",    "leopard",     "lion",        "lizard",
        "lobster",     "man",           "maple tree",  "motorcycle",  "mountain",
        "mouse",       "mushroom",      "oak tree",    "orange",      "orchid",
        "otter",       "palm tree",     "pear",        "pickup truck", "pine tree",
        "plain",       "plate",         "poppy",       "porcupine",   "possum",
        "rabbit",      "raccoon",       "ray",         "road",        "rocket",
        "rose",        "sea",           "seal",        "shark",       "shrew",
        "skunk",       "skyscraper",    "snail",       "snake",       "spider",
        "squirrel",    "streetcar",     "sunflower",   "sweet pepper", "table",
        "tank",        "telephone",     "television",  "tiger",       "tractor",
        "train",       "trout",         "tulip",       "turtle",      "wardrobe",
        "whale",       "willow tree",   "wolf",        "woman",       "worm"};
    return v;
}

const std::vector<std::string>& flowers_names() {
    static const std::vector<std::string> v = {
        "pink primrose",        "hard-leaved pocket orchid", "canterbury bells",
        "sweet pea",            "english marigold",          "tiger lily",
        "moon orchid",          "bird of paradise",          "monkshood",
        "globe thistle",        "snapdragon",                "colt's foot",
        "king protea",          "spear thistle",             "yellow iris",
        "globe-flower",         "purple coneflower",         "peruvian lily",
        "balloon flower",       "giant white arum lily",     "fire lily",
        "pincushion flower",    "fritillary",                "red ginger",
        "grape hyacinth",       "corn poppy",                "prince of wales feathers",
        "stemless gentian",     "artichoke",                 "sweet william",
        "carnation",            "garden phlox",              "love in the mist",
        "mexican aster",        "alpine sea holly",          "ruby-lipped cattleya",
        "cape flower",          "great masterwort",          "siam tulip",
        "lenten rose",          "barbeton daisy",            "daffodil",
        "sword lily",           "poinsettia",                "bolero deep blue",
        "wallflower",           "marigold",                  "buttercup",
        "oxeye daisy",          "common dandelion",          "petunia",
        "wild pansy",           "primula",                   "sunflower",
        "pelargonium",          "bishop of llandaff",        "gaura",
        "geranium",             "orange dahlia",             "pink-yellow dahlia",
        "cautleya spicata",     "japanese anemone",          "black-eyed susan",
        "silverbush",           "californian poppy",         "osteospermum",
        "spring crocus",        "bearded iris",              "windflower",
        "tree poppy",           "gazania",                   "azalea",
        "water lily",           "rose",                      "thorn apple",
        "morning glory",        "passion flower",            "lotus",
        "toad lily",            "anthurium",                 "frangipani",
        "clematis",             "hibiscus",                  "columbine",
        "desert-rose",          "tree mallow",               "magnolia",
        "cyclamen",             "watercress",                "canna lily",
        "hippeastrum",          "bee balm",                  "ball moss",
        "foxglove",             "bougainvillea",             "camellia",
        "mallow",               "mexican petunia",           "bromelia",
        "blanket flower",       "trumpet creeper",           "blackberry lily"};
    return v;
}

const std::vector<std::string>& ucf_names() {
    static const std::vector<std::string> v = {
        "apply eye makeup",     "apply lipstick",      "archery",
        "baby crawling",        "balance beam",        "band marching",
        "baseball pitch",       "basketball",          "basketball dunk",
        "bench press",          "biking",              "billiards",
        "blow dry hair",        "blowing candles",     "body weight squats",
        "bowling",              "boxing punching bag", "boxing speed bag",
        "breast stroke",        "brushing teeth",      "clean and jerk",
        "cliff diving",         "cricket bowling",     "cricket shot",
        "cutting in kitchen",   "diving",              "drumming",
        "fencing",              "field hockey penalty", "floor gymnastics",
        "frisbee catch",        "front crawl",         "golf swing",
        "haircut",              "hammering",           "hammer throw",
        "handstand pushups",    "handstand walking",   "head massage",
        "high jump",            "horse race",          "horse riding",
        "hula hoop",            "ice dancing",         "javelin throw",
        "juggling balls",       "jumping jack",        "jump rope",
        "kayaking",             "knitting",            "long jump",
        "lunges",               "military parade",     "mixing",
        "mopping floor",        "nunchucks",           "parallel bars",
        "pizza tossing",        "playing cello",       "playing daf",
        "playing dhol",         "playing flute",       "playing guitar",
        "playing piano",        "playing sitar",       "playing tabla",
        "playing violin",       "pole vault",          "pommel horse",
        "pull ups",             "punch",               "push ups",
        "rafting",              "rock climbing indoor", "rope climbing",
        "rowing",               "salsa spin",          "shaving beard",
        "shotput",              "skate boarding",      "skiing",
        "skijet",               "sky diving",          "soccer juggling",
        "soccer penalty",       "still rings",         "sumo wrestling",
        "surfing",              "swing",               "table tennis shot",
        "tai chi",              "tennis swing",        "throw discus",
        "trampoline jumping",   "typing",              "uneven bars",
        "volleyball spiking",   "walking with dog",    "wall pushups",
        "writing on board",     "yo yo"};
    return v;
}

const std::vector<std::string>& plant_disease_names() {
    static const std::vector<std::string> v = {
        "apple scab",                    "apple black rot",
        "cedar apple rust",              "apple healthy",
        "blueberry healthy",             "cherry powdery mildew",
        "cherry healthy",                "corn gray leaf spot",
        "corn common rust",              "corn northern leaf blight",
        "corn healthy",                  "grape black rot",
        "grape esca black measles",      "grape leaf blight",
        "grape healthy",                 "orange huanglongbing citrus greening",
        "peach bacterial spot",          "peach healthy",
        "bell pepper bacterial spot",    "bell pepper healthy",
        "potato early blight",           "potato late blight",
        "potato healthy",                "raspberry healthy",
        "soybean healthy",               "squash powdery mildew",
        "strawberry leaf scorch",        "strawberry healthy",
        "tomato bacterial spot",         "tomato early blight",
        "tomato late blight",            "tomato leaf mold",
        "tomato septoria leaf spot",     "tomato spider mites",
        "tomato target spot",            "tomato yellow leaf curl virus",
        "tomato mosaic virus",           "tomato healthy"};
    return v;
}

const std::vector<std::string>& aircraft_names() {
    static const std::vector<std::string> v = {
        "707-320",       "727-200",        "737-200",       "737-300",
        "737-400",       "737-500",        "737-600",       "737-700",
        "737-800",       "737-900",        "747-100",       "747-200",
        "747-300",       "747-400",        "757-200",       "757-300",
        "767-200",       "767-300",        "767-400",       "777-200",
        "777-300",       "A300B4",         "A310",          "A318",
        "A319",          "A320",           "A321",          "A330-200",
        "A330-300",      "A340-200",       "A340-300",      "A340-500",
        "A340-600",      "A380",           "ATR-42",        "ATR-72",
        "An-12",         "BAE 146-200",    "BAE 146-300",   "BAE-125",
        "Beechcraft 1900", "Boeing 717",   "C-130",         "C-47",
        "CRJ-200",       "CRJ-700",        "CRJ-900",       "Cessna 172",
        "Cessna 208",    "Cessna 525",     "Cessna 560",    "Challenger 600",
        "DC-10",         "DC-3",           "DC-6",          "DC-8",
        "DC-9-30",       "DH-82",          "DHC-1",         "DHC-6",
        "DHC-8-100",     "DHC-8-300",      "DR-400",        "Dornier 328",
        "E-170",         "E-190",          "E-195",         "EMB-120",
        "ERJ 135",       "ERJ 145",        "Embraer Legacy 600", "Eurofighter Typhoon",
        "F-16A/B",       "F/A-18",         "Falcon 2000",   "Falcon 900",
        "Fokker 100",    "Fokker 50",      "Fokker 70",     "Global Express",
        "Gulfstream IV", "Gulfstream V",   "Hawk T1",       "Il-76",
        "L-1011",        "MD-11",          "MD-80",         "MD-87",
        "MD-90",         "Metroliner",     "Model B200",    "PA-28",
        "SR-20",         "Saab 2000",      "Saab 340",      "Spitfire",
        "Tornado",       "Tu-134",         "Tu-154",        "Yak-42"};
    return v;
}

BundledDataset make_imagenet_sketch() {
    // 1000 positional classes under 51 hierarchy groups; the last 15 groups
    // (288 leaves) form the novel side, mirroring a subtree-based split.
    BundledDataset out;
    out.manifest.name = "imagenet_sketch";
    out.manifest.item_source.kind = ItemSourceKind::EmbeddingFile;
    out.manifest.notes =
        "positional roster; bind real class names and items before rarity analysis";
    std::vector<int> group_sizes;
    for (int g = 0; g < 35; ++g) group_sizes.push_back(20);
    group_sizes.push_back(12);  // base: 35*20 + 12 = 712
    for (int g = 0; g < 14; ++g) group_sizes.push_back(20);
    group_sizes.push_back(8);  // novel: 14*20 + 8 = 288

    int next_class = 0;
    for (std::size_t g = 0; g < group_sizes.size(); ++g) {
        const std::string group_id = "group_" + pad(static_cast<int>(g), 2);
        for (int k = 0; k < group_sizes[g]; ++k) {
            const std::string cls_id = "sk_" + pad(next_class, 4);
            out.manifest.classes.push_back(
                {cls_id, "sketch category " + std::to_string(next_class), {}});
            out.manifest.hierarchy.push_back({group_id, cls_id});
            if (g < 36) out.split.base.push_back(cls_id);
            else out.split.novel.push_back(cls_id);
            ++next_class;
        }
    }
    return out;
}

}  // namespace

std::vector<BundledDataset> bundled_datasets() {
    std::vector<BundledDataset> all;
    all.push_back(make_imagenet_sketch());
    all.push_back(make_named("dtd", dtd_names(), 37, "texture attributes"));
    all.push_back(make_named("cifar100", cifar100_names(), 80, ""));
    all.push_back(make_named("flowers102", flowers_names(), 82, ""));
    all.push_back(make_named("ucf101", ucf_names(), 81,
                             "frame classification; bind one group id per source video clip"));
    all.push_back(make_named("eurosat", eurosat_names(), 6, "satellite land-use classes"));
    all.push_back(make_positional("quickdraw", "qd_", "drawing category", 345, 276,
                                  "positional roster; bind real class names before rarity analysis"));
    all.push_back(make_positional("fungi", "fungi_", "fungus species", 1394, 1115,
                                  "positional roster; bind real class names before rarity analysis"));
    all.push_back(make_named("plant_disease", plant_disease_names(), 30, ""));
    all.push_back(make_named("aircraft", aircraft_names(), 80, "model variant names"));
    return all;
}

BundledDataset bundled_dataset(const std::string& name) {
    for (auto& b : bundled_datasets())
        if (b.manifest.name == name) return b;
    throw Error("no bundled dataset named '" + name + "'");
}

std::vector<std::string> bundled_dataset_names() {
    std::vector<std::string> names;
    for (const auto& b : bundled_datasets()) names.push_back(b.manifest.name);
    return names;
}

}  // namespace fewtrans
