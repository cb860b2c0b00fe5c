#include "molmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace molmix {

void Molecule::validate() const {
    if (smiles.empty()) throw std::runtime_error("molecule " + id + ": empty SMILES string");
    graph.validate();
    for (std::size_t c = 0; c < conformers.size(); ++c) {
        if (conformers[c].num_atoms() != graph.num_atoms)
            throw std::runtime_error("molecule " + id + ": conformer " + std::to_string(c) +
                                     " has " + std::to_string(conformers[c].num_atoms()) +
                                     " atoms, graph has " + std::to_string(graph.num_atoms));
        for (const auto& coord : conformers[c].coords)
            for (double v : coord)
                if (!std::isfinite(v))
                    throw std::runtime_error("molecule " + id + ": non-finite coordinate");
    }
}

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

std::vector<std::size_t> Dataset::indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (split[i] == s) out.push_back(i);
    return out;
}

void Dataset::compute_normalization() {
    const std::size_t t = target_names.size();
    target_mean.assign(t, 0.0);
    target_std.assign(t, 1.0);
    auto train = indices_of(Split::Train);
    if (train.empty()) return;
    for (std::size_t j = 0; j < t; ++j) {
        double mean = 0;
        for (std::size_t i : train) mean += molecules[i].targets[j];
        mean /= double(train.size());
        double var = 0;
        for (std::size_t i : train) {
            const double c = molecules[i].targets[j] - mean;
            var += c * c;
        }
        var /= double(train.size());
        target_mean[j] = mean;
        target_std[j] = var > 0 ? std::sqrt(var) : 1.0;
    }
}

double Dataset::normalize(double value, std::size_t target) const {
    return (value - target_mean.at(target)) / target_std.at(target);
}

double Dataset::denormalize(double value, std::size_t target) const {
    return value * target_std.at(target) + target_mean.at(target);
}

// ---------------------------------------------------------------------------
// JSONL io

namespace {

Molecule molecule_from_json(const nlohmann::json& j) {
    Molecule mol;
    mol.id = j.at("id").get<std::string>();
    mol.smiles = j.at("smiles").get<std::string>();
    mol.graph.atom_features = j.at("atoms").get<std::vector<std::vector<int>>>();
    mol.graph.num_atoms = mol.graph.atom_features.size();
    for (const auto& bond : j.at("bonds")) {
        if (bond.size() != 3)
            throw std::runtime_error("molecule " + mol.id + ": bond entry needs [u, v, type]");
        const auto u = bond[0].get<long long>();
        const auto v = bond[1].get<long long>();
        const int type = bond[2].get<int>();
        if (u < 0 || v < 0)
            throw std::runtime_error("molecule " + mol.id + ": negative bond endpoint");
        if (type < 1 || type > 4)
            throw std::runtime_error("molecule " + mol.id + ": unknown bond type " +
                                     std::to_string(type));
        mol.graph.add_bond(std::size_t(u), std::size_t(v), {type});
    }
    for (const auto& conf_json : j.at("conformers")) {
        Conformer conf;
        for (const auto& coord : conf_json) {
            if (coord.size() != 3)
                throw std::runtime_error("molecule " + mol.id + ": coordinate needs [x, y, z]");
            conf.coords.push_back({coord[0].get<double>(), coord[1].get<double>(),
                                   coord[2].get<double>()});
        }
        mol.conformers.push_back(std::move(conf));
    }
    mol.targets = j.at("targets").get<std::vector<double>>();
    mol.validate();
    return mol;
}

nlohmann::ordered_json molecule_to_json(const Molecule& mol) {
    nlohmann::ordered_json j;
    j["id"] = mol.id;
    j["smiles"] = mol.smiles;
    j["atoms"] = mol.graph.atom_features;
    auto bonds = nlohmann::ordered_json::array();
    for (std::size_t e = 0; e < mol.graph.num_edges(); ++e) {
        // undirected bonds are listed once
        if (mol.graph.edge_src[e] < mol.graph.edge_dst[e])
            bonds.push_back({mol.graph.edge_src[e], mol.graph.edge_dst[e],
                             mol.graph.edge_features[e].at(0)});
    }
    j["bonds"] = std::move(bonds);
    auto conformers = nlohmann::ordered_json::array();
    for (const auto& conf : mol.conformers) {
        auto coords = nlohmann::ordered_json::array();
        for (const auto& c : conf.coords) coords.push_back({c[0], c[1], c[2]});
        conformers.push_back(std::move(coords));
    }
    j["conformers"] = std::move(conformers);
    j["targets"] = mol.targets;
    return j;
}

std::string meta_path_for(const std::string& dataset_path) { return dataset_path + ".meta.json"; }

}  // namespace

Dataset load_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_jsonl: cannot open " + path);
    Dataset ds;
    std::string line;
    std::size_t line_number = 0;
    std::optional<std::size_t> target_count;
    while (std::getline(is, line)) {
        ++line_number;
        if (line.empty()) continue;
        Molecule mol;
        try {
            mol = molecule_from_json(nlohmann::json::parse(line));
        } catch (const std::exception& e) {
            throw std::runtime_error("load_jsonl: " + path + " line " +
                                     std::to_string(line_number) + ": " + e.what());
        }
        if (target_count && mol.targets.size() != *target_count)
            throw std::runtime_error("load_jsonl: " + path + " line " +
                                     std::to_string(line_number) + ": molecule " + mol.id +
                                     " has " + std::to_string(mol.targets.size()) +
                                     " targets, expected " + std::to_string(*target_count));
        target_count = mol.targets.size();
        ds.molecules.push_back(std::move(mol));
    }
    if (ds.molecules.empty()) throw std::runtime_error("load_jsonl: " + path + " holds no molecules");
    ds.split.assign(ds.molecules.size(), Split::Train);

    std::ifstream meta(meta_path_for(path));
    if (meta) {
        nlohmann::json j = nlohmann::json::parse(meta);
        ds.target_names = j.at("target_names").get<std::vector<std::string>>();
        if (ds.target_names.size() != *target_count)
            throw std::runtime_error("load_jsonl: meta file names " +
                                     std::to_string(ds.target_names.size()) +
                                     " targets but records hold " + std::to_string(*target_count));
    } else {
        for (std::size_t t = 0; t < *target_count; ++t)
            ds.target_names.push_back("t" + std::to_string(t));
    }
    return ds;
}

void save_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_jsonl: cannot open " + path);
    for (const auto& mol : ds.molecules) os << molecule_to_json(mol).dump() << '\n';
    if (!os) throw std::runtime_error("save_jsonl: write failed for " + path);
}

void save_dataset_meta(const Dataset& ds, const std::string& dataset_path,
                       const std::string& generator_config_json) {
    nlohmann::ordered_json j;
    j["target_names"] = ds.target_names;
    if (!generator_config_json.empty())
        j["generator"] = nlohmann::json::parse(generator_config_json);
    std::ofstream os(meta_path_for(dataset_path), std::ios::trunc);
    if (!os) throw std::runtime_error("save_dataset_meta: cannot open " +
                                      meta_path_for(dataset_path));
    os << j.dump(2) << '\n';
}

Dataset split_deterministic(Dataset ds, std::array<double, 3> fractions, std::uint64_t seed) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions sum to " + std::to_string(total) +
                                    ", expected 1");
    for (double f : fractions)
        if (f < 0) throw std::invalid_argument("split fractions must be non-negative");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = std::size_t(std::floor(fractions[0] * double(ds.size()) + 0.5));
    const std::size_t n_val = std::size_t(std::floor(fractions[1] * double(ds.size()) + 0.5));
    ds.split.assign(ds.size(), Split::Test);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < n_train)
            ds.split[order[i]] = Split::Train;
        else if (i < n_train + n_val)
            ds.split[order[i]] = Split::Val;
    }
    return ds;
}

void save_split(const Dataset& ds, const std::string& path) {
    nlohmann::ordered_json j;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        auto ids = nlohmann::ordered_json::array();
        for (std::size_t i : ds.indices_of(s)) ids.push_back(ds.molecules[i].id);
        j[split_name(s)] = std::move(ids);
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_split: cannot open " + path);
    os << j.dump(2) << '\n';
}

void apply_split_file(Dataset& ds, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("apply_split_file: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < ds.size(); ++i) by_id[ds.molecules[i].id] = i;
    std::size_t assigned = 0;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        for (const auto& id : j.at(split_name(s))) {
            auto it = by_id.find(id.get<std::string>());
            if (it == by_id.end())
                throw std::runtime_error("apply_split_file: unknown molecule id " +
                                         id.get<std::string>());
            ds.split[it->second] = s;
            ++assigned;
        }
    }
    if (assigned != ds.size())
        throw std::runtime_error("apply_split_file: split covers " + std::to_string(assigned) +
                                 " of " + std::to_string(ds.size()) + " molecules");
}

// ---------------------------------------------------------------------------
// synthetic generator

std::string GenConfig::to_json_string() const {
    nlohmann::ordered_json j;
    j["count"] = count;
    j["atoms_min"] = atoms_min;
    j["atoms_max"] = atoms_max;
    j["k_conformers"] = k_conformers;
    j["noise_sigma"] = noise_sigma;
    j["ring_probability"] = ring_probability;
    j["marked_char"] = std::string(1, marked_char);
    j["targets"] = targets;
    j["seed"] = seed;
    return j.dump(2);
}

GenConfig GenConfig::from_json_string(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    GenConfig cfg;
    auto set = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    set("count", cfg.count);
    set("atoms_min", cfg.atoms_min);
    set("atoms_max", cfg.atoms_max);
    set("k_conformers", cfg.k_conformers);
    set("noise_sigma", cfg.noise_sigma);
    set("ring_probability", cfg.ring_probability);
    if (j.contains("marked_char")) {
        const auto s = j.at("marked_char").get<std::string>();
        if (s.size() != 1) throw std::invalid_argument("marked_char must be one character");
        cfg.marked_char = s[0];
    }
    set("targets", cfg.targets);
    set("seed", cfg.seed);
    return cfg;
}

namespace {

struct ElementInfo {
    int atomic_number;
    char symbol;
    int valence;
};

constexpr ElementInfo kElements[] = {{6, 'C', 4}, {7, 'N', 3}, {8, 'O', 2}};

// Deterministic DFS SMILES writer: atom symbols, '=' for double bonds,
// parentheses for branches and digit '1' for the single optional ring.
std::string write_smiles(const MolGraph& graph, const std::vector<char>& symbols,
                         const std::vector<int>& bond_type_of,
                         std::optional<std::pair<std::size_t, std::size_t>> ring_bond) {
    const std::size_t n = graph.num_atoms;
    std::vector<std::vector<std::pair<std::size_t, int>>> adjacency(n);
    for (std::size_t e = 0; e < graph.num_edges(); ++e)
        adjacency[graph.edge_src[e]].push_back({graph.edge_dst[e], bond_type_of[e]});
    for (auto& neighbors : adjacency)
        std::sort(neighbors.begin(), neighbors.end());

    std::string out;
    std::vector<bool> visited(n, false);
    // returns true for the ring-closure edge so DFS skips it
    auto is_ring_edge = [&](std::size_t u, std::size_t v) {
        return ring_bond && ((ring_bond->first == u && ring_bond->second == v) ||
                             (ring_bond->first == v && ring_bond->second == u));
    };
    std::function<void(std::size_t, std::size_t, int)> visit =
        [&](std::size_t atom, std::size_t parent, int bond_from_parent) {
            visited[atom] = true;
            if (bond_from_parent == 2) out += '=';
            out += symbols[atom];
            if (ring_bond && (atom == ring_bond->first || atom == ring_bond->second)) out += '1';
            std::vector<std::pair<std::size_t, int>> children;
            for (auto [next, type] : adjacency[atom]) {
                if (next == parent || visited[next] || is_ring_edge(atom, next)) continue;
                children.push_back({next, type});
            }
            for (std::size_t c = 0; c < children.size(); ++c) {
                const bool last = c + 1 == children.size();
                if (!last) out += '(';
                visit(children[c].first, atom, children[c].second);
                if (!last) out += ')';
            }
        };
    visit(0, n, 0);
    return out;
}

std::vector<std::array<double, 3>> spring_layout(const MolGraph& graph, std::mt19937_64& rng) {
    const std::size_t n = graph.num_atoms;
    const double bond_length = 1.5;
    const double repulsion_radius = 2.4;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::array<double, 3>> pos(n);
    const double scale = 0.8 * std::cbrt(double(n));
    for (auto& p : pos)
        for (auto& c : p) c = gauss(rng) * scale;

    std::vector<std::pair<std::size_t, std::size_t>> bonds;
    std::vector<std::vector<bool>> bonded(n, std::vector<bool>(n, false));
    for (std::size_t e = 0; e < graph.num_edges(); ++e) {
        const std::size_t u = graph.edge_src[e], v = graph.edge_dst[e];
        if (u < v) bonds.push_back({u, v});
        bonded[u][v] = true;
    }

    const int iterations = 400;
    const double step = 0.05;
    std::vector<std::array<double, 3>> force(n);
    for (int it = 0; it < iterations; ++it) {
        for (auto& f : force) f = {0, 0, 0};
        for (auto [u, v] : bonds) {
            double d[3] = {pos[v][0] - pos[u][0], pos[v][1] - pos[u][1], pos[v][2] - pos[u][2]};
            const double r = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + 1e-12;
            const double pull = (r - bond_length) / r;
            for (int c = 0; c < 3; ++c) {
                force[u][c] += pull * d[c];
                force[v][c] -= pull * d[c];
            }
        }
        for (std::size_t u = 0; u < n; ++u) {
            for (std::size_t v = u + 1; v < n; ++v) {
                if (bonded[u][v]) continue;
                double d[3] = {pos[v][0] - pos[u][0], pos[v][1] - pos[u][1],
                               pos[v][2] - pos[u][2]};
                const double r = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + 1e-12;
                if (r >= repulsion_radius) continue;
                const double push = 0.5 * (repulsion_radius - r) / r;
                for (int c = 0; c < 3; ++c) {
                    force[u][c] -= push * d[c];
                    force[v][c] += push * d[c];
                }
            }
        }
        for (std::size_t u = 0; u < n; ++u)
            for (int c = 0; c < 3; ++c) pos[u][c] += step * force[u][c];
    }
    return pos;
}

}  // namespace

std::size_t wiener_index(const MolGraph& graph) {
    const std::size_t n = graph.num_atoms;
    std::vector<std::vector<std::size_t>> adjacency(n);
    for (std::size_t e = 0; e < graph.num_edges(); ++e)
        adjacency[graph.edge_src[e]].push_back(graph.edge_dst[e]);
    std::size_t total = 0;
    for (std::size_t start = 0; start < n; ++start) {
        std::vector<std::size_t> dist(n, std::size_t(-1));
        std::deque<std::size_t> queue{start};
        dist[start] = 0;
        while (!queue.empty()) {
            const std::size_t u = queue.front();
            queue.pop_front();
            for (std::size_t v : adjacency[u]) {
                if (dist[v] != std::size_t(-1)) continue;
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
        for (std::size_t v = 0; v < n; ++v) {
            if (dist[v] == std::size_t(-1))
                throw std::invalid_argument("wiener_index: graph is disconnected");
            total += dist[v];
        }
    }
    return total / 2;
}

double mean_pairwise_distance(const Conformer& conf) {
    const std::size_t n = conf.num_atoms();
    if (n < 2) return 0.0;
    double total = 0;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
            const double dx = conf.coords[u][0] - conf.coords[v][0];
            const double dy = conf.coords[u][1] - conf.coords[v][1];
            const double dz = conf.coords[u][2] - conf.coords[v][2];
            total += std::sqrt(dx * dx + dy * dy + dz * dz);
        }
    }
    return total / (double(n) * double(n - 1) / 2.0);
}

Rotation random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    double m[3][3];
    for (auto& row : m)
        for (auto& v : row) v = gauss(rng);
    // Gram-Schmidt columns
    auto normalize = [](double* v) {
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        for (int i = 0; i < 3; ++i) v[i] /= n;
    };
    double c0[3] = {m[0][0], m[1][0], m[2][0]};
    double c1[3] = {m[0][1], m[1][1], m[2][1]};
    normalize(c0);
    const double proj = c0[0] * c1[0] + c0[1] * c1[1] + c0[2] * c1[2];
    for (int i = 0; i < 3; ++i) c1[i] -= proj * c0[i];
    normalize(c1);
    double c2[3] = {c0[1] * c1[2] - c0[2] * c1[1], c0[2] * c1[0] - c0[0] * c1[2],
                    c0[0] * c1[1] - c0[1] * c1[0]};
    Rotation rot;
    for (int i = 0; i < 3; ++i) {
        rot[i][0] = c0[i];
        rot[i][1] = c1[i];
        rot[i][2] = c2[i];
    }
    return rot;
}

Conformer apply_rigid_motion(const Conformer& conf, const Rotation& rot,
                             const std::array<double, 3>& translation) {
    Conformer out;
    out.coords.reserve(conf.coords.size());
    for (const auto& p : conf.coords) {
        std::array<double, 3> q{};
        for (int i = 0; i < 3; ++i)
            q[i] = rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2] + translation[i];
        out.coords.push_back(q);
    }
    return out;
}

Dataset gen_synthetic(const GenConfig& cfg) {
    if (cfg.count < 1) throw std::invalid_argument("gen_synthetic: count must be >= 1");
    if (cfg.atoms_min < 2 || cfg.atoms_max < cfg.atoms_min)
        throw std::invalid_argument("gen_synthetic: need 2 <= atoms_min <= atoms_max");
    for (const auto& t : cfg.targets)
        if (t != "geom" && t != "topo" && t != "str" && t != "mix")
            throw std::invalid_argument("gen_synthetic: unknown target '" + t + "'");
    if (cfg.targets.empty()) throw std::invalid_argument("gen_synthetic: no targets selected");

    std::mt19937_64 rng(cfg.seed);
    Dataset ds;
    ds.target_names = cfg.targets;

    for (std::size_t index = 0; index < cfg.count; ++index) {
        std::uniform_int_distribution<std::size_t> atom_count_dist(cfg.atoms_min, cfg.atoms_max);
        const std::size_t n = atom_count_dist(rng);

        std::vector<std::size_t> element(n);
        std::vector<int> free_valence(n);
        std::discrete_distribution<std::size_t> element_dist({0.6, 0.2, 0.2});
        for (std::size_t i = 0; i < n; ++i) {
            element[i] = element_dist(rng);
            free_valence[i] = kElements[element[i]].valence;
        }

        MolGraph graph;
        graph.num_atoms = n;
        std::vector<int> bond_type_of;  // parallel to directed edges
        auto add_bond = [&](std::size_t u, std::size_t v, int type) {
            graph.add_bond(u, v, {type});
            bond_type_of.push_back(type);
            bond_type_of.push_back(type);
            free_valence[u] -= type;
            free_valence[v] -= type;
        };

        // random tree under valence limits
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t i = 1; i < n; ++i) {
            std::vector<std::size_t> anchors;
            for (std::size_t a = 0; a < i; ++a)
                if (free_valence[a] >= 1) anchors.push_back(a);
            if (anchors.empty()) {
                // all earlier valence consumed; fall back to the previous atom
                // with a single bond (keeps the graph connected)
                anchors.push_back(i - 1);
                free_valence[i - 1] = 1;
            }
            std::uniform_int_distribution<std::size_t> pick(0, anchors.size() - 1);
            const std::size_t anchor = anchors[pick(rng)];
            const bool double_bond = free_valence[anchor] >= 2 && free_valence[i] >= 2 &&
                                     unit(rng) < 0.15;
            add_bond(anchor, i, double_bond ? 2 : 1);
        }

        // optionally close one ring between non-adjacent atoms with free valence
        std::optional<std::pair<std::size_t, std::size_t>> ring_bond;
        if (n >= 4 && unit(rng) < cfg.ring_probability) {
            std::vector<std::vector<bool>> bonded(n, std::vector<bool>(n, false));
            for (std::size_t e = 0; e < graph.num_edges(); ++e)
                bonded[graph.edge_src[e]][graph.edge_dst[e]] = true;
            std::vector<std::pair<std::size_t, std::size_t>> candidates;
            for (std::size_t u = 0; u < n; ++u)
                for (std::size_t v = u + 1; v < n; ++v)
                    if (!bonded[u][v] && free_valence[u] >= 1 && free_valence[v] >= 1)
                        candidates.push_back({u, v});
            if (!candidates.empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
                ring_bond = candidates[pick(rng)];
                add_bond(ring_bond->first, ring_bond->second, 1);
            }
        }

        // atom features: atomic number, degree, formal charge (offset +5)
        std::vector<int> degree(n, 0);
        for (std::size_t e = 0; e < graph.num_edges(); ++e) ++degree[graph.edge_src[e]];
        graph.atom_features.resize(n);
        std::vector<char> symbols(n);
        for (std::size_t i = 0; i < n; ++i) {
            symbols[i] = kElements[element[i]].symbol;
            graph.atom_features[i] = {kElements[element[i]].atomic_number, degree[i], 5};
        }

        Molecule mol;
        char idbuf[24];
        std::snprintf(idbuf, sizeof(idbuf), "mol%06zu", index);
        mol.id = idbuf;
        mol.smiles = write_smiles(graph, symbols, bond_type_of, ring_bond);
        mol.graph = std::move(graph);

        // base embedding by spring relaxation, then jittered conformers under
        // independent rigid motions
        auto base = spring_layout(mol.graph, rng);
        std::normal_distribution<double> jitter(0.0, cfg.noise_sigma);
        for (std::size_t k = 0; k < cfg.k_conformers; ++k) {
            Conformer conf;
            conf.coords = base;
            for (auto& p : conf.coords)
                for (auto& c : p) c += jitter(rng);
            const Rotation rot = random_rotation(rng);
            std::array<double, 3> shift{};
            std::normal_distribution<double> offset(0.0, 3.0);
            for (auto& c : shift) c = offset(rng);
            mol.conformers.push_back(apply_rigid_motion(conf, rot, shift));
        }

        const double geom = mol.conformers.empty() ? 0.0
                                                   : mean_pairwise_distance(mol.conformers[0]);
        const double pair_count = double(n) * double(n - 1) / 2.0;
        const double topo = double(wiener_index(mol.graph)) / pair_count;
        double marked = 0;
        for (char c : mol.smiles)
            if (c == cfg.marked_char) marked += 1;
        const double str = marked / double(mol.smiles.size());
        const double mix = (geom + topo + str) / 3.0;
        for (const auto& name : cfg.targets) {
            if (name == "geom") mol.targets.push_back(geom);
            else if (name == "topo") mol.targets.push_back(topo);
            else if (name == "str") mol.targets.push_back(str);
            else mol.targets.push_back(mix);
        }

        mol.validate();
        ds.molecules.push_back(std::move(mol));
    }
    ds.split.assign(ds.molecules.size(), Split::Train);
    return ds;
}

}  // namespace molmix
