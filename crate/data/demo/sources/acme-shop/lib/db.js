const mysql = require('mysql');

const pool = mysql.createPool({
  host: process.env.DB_HOST,
  user: process.env.DB_USER,
  password: process.env.DB_PASSWORD,
  connectionLimit: 10,
});

function query(sql, params, callback) {
  if (typeof params === 'function') {
    callback = params;
    params = [];
  }
  pool.query(sql, params, callback);
}

module.exports = { query };
