#ifndef FKD_TREE_HPP_
#define FKD_TREE_HPP_

#include <string>
#include <utility>
#include <vector>

namespace fkd {

/// Rooted tree over L keypoints. Edge order is BFS from the root, which is
/// also the message-passing schedule order.
class KeypointTree {
 public:
  /// Edges are (parent, child) index pairs; validated for connectivity,
  /// acyclicity and exactly L-1 edges.
  KeypointTree(int num_keypoints, int root,
               std::vector<std::pair<int, int>> edges,
               std::vector<std::string> names = {});

  int num_keypoints() const { return num_keypoints_; }
  int root() const { return root_; }
  /// BFS order from the root.
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int node) const { return names_[static_cast<size_t>(node)]; }
  int index_of(const std::string& name) const;

  /// Node visit order of a BFS from the root (root first).
  std::vector<int> bfs_order() const;

  /// `parent child` name pairs, one per line.
  std::string serialize() const;
  static KeypointTree parse(const std::string& text);

  static KeypointTree load(const std::string& path);
  void save(const std::string& path) const;

 private:
  int num_keypoints_;
  int root_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::string> names_;
};

/// The canonical 21-point face tree rooted at NoseCenter; other L fall back
/// to a star rooted at node 0.
KeypointTree default_tree(int num_keypoints = 21);

}  // namespace fkd

#endif  // FKD_TREE_HPP_
