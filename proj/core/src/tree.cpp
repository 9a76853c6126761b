#include "fkd/tree.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace fkd {

namespace {

std::vector<std::string> default_names(int n) {
  std::vector<std::string> names(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) names[static_cast<size_t>(i)] = "kp" + std::to_string(i);
  return names;
}

}  // namespace

KeypointTree::KeypointTree(int num_keypoints, int root,
                           std::vector<std::pair<int, int>> edges,
                           std::vector<std::string> names)
    : num_keypoints_(num_keypoints), root_(root), names_(std::move(names)) {
  if (num_keypoints < 2) {
    throw std::invalid_argument("KeypointTree: need at least 2 keypoints");
  }
  if (root < 0 || root >= num_keypoints) {
    throw std::invalid_argument("KeypointTree: root out of range");
  }
  if (static_cast<int>(edges.size()) != num_keypoints - 1) {
    throw std::invalid_argument(
        "KeypointTree: expected " + std::to_string(num_keypoints - 1) +
        " edges, got " + std::to_string(edges.size()));
  }
  if (names_.empty()) names_ = default_names(num_keypoints);
  if (static_cast<int>(names_.size()) != num_keypoints) {
    throw std::invalid_argument("KeypointTree: name count mismatch");
  }

  std::vector<std::vector<int>> adj(static_cast<size_t>(num_keypoints));
  for (auto [a, b] : edges) {
    if (a < 0 || a >= num_keypoints || b < 0 || b >= num_keypoints) {
      throw std::invalid_argument("KeypointTree: edge node out of range");
    }
    adj[static_cast<size_t>(a)].push_back(b);
    adj[static_cast<size_t>(b)].push_back(a);
  }
  // BFS from root; visiting all nodes with L-1 undirected edges implies a tree
  std::vector<int> parent(static_cast<size_t>(num_keypoints), -1);
  std::vector<bool> seen(static_cast<size_t>(num_keypoints), false);
  std::queue<int> q;
  q.push(root);
  seen[static_cast<size_t>(root)] = true;
  edges_.clear();
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[static_cast<size_t>(u)]) {
      if (seen[static_cast<size_t>(v)]) continue;
      seen[static_cast<size_t>(v)] = true;
      parent[static_cast<size_t>(v)] = u;
      edges_.emplace_back(u, v);
      q.push(v);
    }
  }
  if (static_cast<int>(edges_.size()) != num_keypoints - 1 ||
      !std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("KeypointTree: edges do not form a connected tree");
  }
}

int KeypointTree::index_of(const std::string& name) const {
  for (size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  throw std::out_of_range("KeypointTree: unknown keypoint name " + name);
}

std::vector<int> KeypointTree::bfs_order() const {
  std::vector<int> order;
  order.push_back(root_);
  for (auto [p, c] : edges_) order.push_back(c);
  return order;
}

std::string KeypointTree::serialize() const {
  std::ostringstream os;
  for (auto [p, c] : edges_) {
    os << names_[static_cast<size_t>(p)] << " " << names_[static_cast<size_t>(c)]
       << "\n";
  }
  return os.str();
}

KeypointTree KeypointTree::parse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::map<std::string, int> ids;
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> edges;
  auto intern = [&](const std::string& n) {
    auto it = ids.find(n);
    if (it != ids.end()) return it->second;
    const int id = static_cast<int>(names.size());
    ids.emplace(n, id);
    names.push_back(n);
    return id;
  };
  int line_no = 0;
  int root = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string a, b, extra;
    if (!(ls >> a >> b) || (ls >> extra)) {
      throw std::invalid_argument("KeypointTree: malformed line " +
                                  std::to_string(line_no) + ": " + line);
    }
    const int pa = intern(a), cb = intern(b);
    if (root == -1) root = pa;
    edges.emplace_back(pa, cb);
  }
  if (edges.empty()) throw std::invalid_argument("KeypointTree: empty tree file");
  const int count = static_cast<int>(names.size());
  return KeypointTree(count, root, std::move(edges), std::move(names));
}

KeypointTree KeypointTree::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("KeypointTree: cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

void KeypointTree::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("KeypointTree: cannot write " + path);
  f << serialize();
}

KeypointTree default_tree(int num_keypoints) {
  if (num_keypoints == 21) {
    const char* text =
        "NoseCenter NoseLeft\n"
        "NoseCenter NoseRight\n"
        "NoseCenter LeftEyeCenter\n"
        "NoseCenter RightEyeCenter\n"
        "NoseCenter MouthCenter\n"
        "LeftEyeCenter LeftEyeLeftCorner\n"
        "LeftEyeCenter LeftEyeRightCorner\n"
        "LeftEyeCenter LeftBrowCenter\n"
        "RightEyeCenter RightEyeLeftCorner\n"
        "RightEyeCenter RightEyeRightCorner\n"
        "RightEyeCenter RightBrowCenter\n"
        "LeftBrowCenter LeftBrowLeftCorner\n"
        "LeftBrowCenter LeftBrowRightCorner\n"
        "RightBrowCenter RightBrowLeftCorner\n"
        "RightBrowCenter RightBrowRightCorner\n"
        "LeftEyeLeftCorner LeftEar\n"
        "RightEyeRightCorner RightEar\n"
        "MouthCenter MouthLeftCorner\n"
        "MouthCenter MouthRightCorner\n"
        "MouthCenter ChinCenter\n";
    return KeypointTree::parse(text);
  }
  // synthetic-star fallback rooted at node 0
  std::vector<std::pair<int, int>> edges;
  for (int i = 1; i < num_keypoints; ++i) edges.emplace_back(0, i);
  return KeypointTree(num_keypoints, 0, std::move(edges));
}

}  // namespace fkd
